fn main() {
    std::process::exit(mevtr_cli::run(std::env::args_os()));
}
