use std::fs;
use std::path::Path;

use log::info;
use mevtr::corpus::{generate_synthetic, load_corpus, load_embeddings, save_corpus, save_embeddings, save_labels, SyntheticConfig};
use mevtr::eval::{collapse_diagnostic, evaluate, evaluate_subsets, MetricsReport, SubsetFamily, SubsetMetrics, Task};
use mevtr::io::write_atomic;
use mevtr::keyevents::{
    key_event_embeddings, key_events_to_jsonl, parse_key_events, select_key_events, ClusterConfig, Init, KeyEventRecord,
};
use mevtr::loss::{mevtr_loss, plain_softmax_loss, BatchLayout, LossConfig};
use mevtr::similarity::{load_scores, save_scores, score_matrix_threaded};
use mevtr::trainer::{project_corpus, train, Ablation, ProjectionHead, Recluster, TrainConfig};
use serde::Serialize;

use crate::{
    output_path, CliError, CollapseArgs, Command, EvaluateArgs, GenerateArgs, GlobalArgs, InitArg, LossEvalArgs,
    ReclusterArg, ScoreArgs, SelectEventsArgs, SubsetArg, TaskArg, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn dispatch(cli: &crate::Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Generate(a) => generate(g, a),
        Command::SelectEvents(a) => select_events(g, a),
        Command::Score(a) => score(g, a),
        Command::LossEval(a) => loss_eval(g, a),
        Command::Train(a) => train_cmd(g, a),
        Command::Evaluate(a) => evaluate_cmd(g, a),
        Command::DiagnoseCollapse(a) => collapse(g, a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write_json<T: Serialize>(g: &GlobalArgs, path: &Path, value: &T) -> Result<()> {
    let full = output_path(g, path)?;
    write_atomic(&full, to_json(value)?.as_bytes())?;
    info!("wrote {}", full.display());
    Ok(())
}

fn load_head(path: &Path) -> Result<ProjectionHead> {
    Ok(ProjectionHead::from_embedding_matrix(&load_embeddings(path)?)?)
}

fn generate(g: &GlobalArgs, a: &GenerateArgs) -> Result<()> {
    let config = SyntheticConfig {
        n_videos: a.n_videos,
        events_per_video: (a.events.0, a.events.1),
        frames_per_event: (a.frames.0, a.frames.1),
        dim: a.dim,
        event_separation: a.separation,
        noise_scale: a.noise,
        frame_interval_s: a.frame_interval,
        seed: g.seed,
    };
    let synthetic = generate_synthetic(&config)?;
    let dir = output_path(g, &a.out)?;
    let manifest = save_corpus(&synthetic.corpus, &dir)?;
    save_labels(&synthetic.labels, dir.join("manifest.labels.jsonl"))?;
    info!(
        "wrote {} videos and {} captions to {}",
        synthetic.corpus.videos().len(),
        synthetic.corpus.texts().len(),
        manifest.display()
    );
    Ok(())
}

fn select_events(g: &GlobalArgs, a: &SelectEventsArgs) -> Result<()> {
    let corpus = load_corpus(&a.manifest)?;
    let config = ClusterConfig {
        k: a.k,
        max_iterations: a.max_iter,
        tolerance: a.tol,
        seed: g.seed,
        init: match a.init {
            InitArg::Even => Init::EvenlySpaced,
            InitArg::Plusplus => Init::PlusPlus,
        },
        swap_refine: !a.no_swap,
    };
    let records = corpus
        .videos()
        .iter()
        .map(|v| Ok(KeyEventRecord::new(v.video_id.clone(), &select_key_events(&v.frames, &config)?)))
        .collect::<Result<Vec<_>>>()?;
    let full = output_path(g, &a.out)?;
    write_atomic(&full, key_events_to_jsonl(&records)?.as_bytes())?;
    info!("wrote key events for {} videos to {}", records.len(), full.display());
    Ok(())
}

fn score(g: &GlobalArgs, a: &ScoreArgs) -> Result<()> {
    let mut corpus = load_corpus(&a.manifest)?;
    if let Some(head) = &a.head {
        corpus = project_corpus(&corpus, &load_head(head)?)?;
    }
    let keys = match &a.keyevents {
        Some(path) => key_event_embeddings(&corpus, &parse_key_events(&read_text(path)?)?)?,
        None => corpus
            .videos()
            .iter()
            .map(|v| (v.video_id.clone(), v.frames.clone()))
            .collect(),
    };
    let scores = score_matrix_threaded(&corpus, &keys, a.mode, g.threads)?;
    let full = output_path(g, &a.out)?;
    save_scores(&scores, &full)?;
    info!("wrote {} x {} scores to {}", scores.n_videos(), scores.n_texts(), full.display());
    Ok(())
}

fn loss_eval(g: &GlobalArgs, a: &LossEvalArgs) -> Result<()> {
    let grid = load_scores(&a.scores)?.to_array();
    let layout = BatchLayout::from_json(&read_text(&a.batch)?)?;
    let out = if a.no_mevtr_loss {
        plain_softmax_loss(&grid, &layout, a.tau)?
    } else {
        mevtr_loss(&grid, &layout, &LossConfig { temperature: a.tau, weighting: a.alpha })?
    };
    match &a.out {
        Some(path) => write_json(g, path, &out),
        None => {
            print!("{}", to_json(&out)?);
            Ok(())
        }
    }
}

fn train_cmd(g: &GlobalArgs, a: &TrainArgs) -> Result<()> {
    let corpus = load_corpus(&a.manifest)?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_videos: a.batch_videos,
        learning_rate: a.lr,
        seed: g.seed,
        loss: LossConfig { temperature: a.tau, weighting: a.alpha },
        mode: a.mode,
        ablation: Ablation {
            use_key_events: !a.no_key_events,
            use_mevtr_loss: !a.no_mevtr_loss,
        },
        recluster: match a.recluster {
            ReclusterArg::Once => Recluster::Once,
            ReclusterArg::Epoch => Recluster::EveryEpoch,
        },
        cluster: ClusterConfig {
            k: a.k,
            max_iterations: a.max_iter,
            tolerance: a.tol,
            seed: g.seed,
            ..ClusterConfig::default()
        },
    };
    let report = train(&corpus, &config)?;
    for e in &report.epochs {
        info!("epoch {}: total {:.6} collapse {:.6}", e.epoch, e.total, e.collapse_mean);
    }
    write_json(g, &a.report, &report)?;
    if let Some(path) = &a.head_out {
        let full = output_path(g, path)?;
        save_embeddings(&report.final_head.to_embedding_matrix()?, &full)?;
        info!("wrote head to {}", full.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluationOutput {
    overall: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    subsets: Option<Vec<SubsetMetrics>>,
}

#[derive(Serialize)]
struct RecallRow<'a> {
    subset: &'a str,
    k: usize,
    average: f64,
    one_hit: f64,
    all_hit: f64,
    median_rank: f64,
    n_queries: usize,
}

fn recall_rows<'a>(subset: &'a str, m: &MetricsReport) -> Vec<RecallRow<'a>> {
    m.recalls.iter().map(|r| RecallRow {
        subset,
        k: r.k,
        average: r.average,
        one_hit: r.one_hit,
        all_hit: r.all_hit,
        median_rank: m.median_rank,
        n_queries: m.n_queries,
    })
    .collect()
}

fn write_csv<R: Serialize>(g: &GlobalArgs, path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    let full = output_path(g, path)?;
    write_atomic(&full, &bytes)?;
    info!("wrote {}", full.display());
    Ok(())
}

fn evaluate_cmd(g: &GlobalArgs, a: &EvaluateArgs) -> Result<()> {
    let scores = load_scores(&a.scores)?;
    let corpus = load_corpus(&a.manifest)?;
    let task = match a.task {
        TaskArg::V2t => Task::VideoToText,
        TaskArg::T2v => Task::TextToVideo,
    };
    let overall = evaluate(&scores, &corpus, task, &a.ks)?;
    let subsets = match a.subset_by {
        SubsetArg::None => None,
        SubsetArg::Duration => Some(evaluate_subsets(&scores, &corpus, task, &a.ks, SubsetFamily::Duration)?),
        SubsetArg::Events => Some(evaluate_subsets(&scores, &corpus, task, &a.ks, SubsetFamily::Events)?),
    };
    let output = EvaluationOutput { overall, subsets };
    write_json(g, &a.out, &output)?;
    if let Some(path) = &a.csv {
        let mut rows = recall_rows("all", &output.overall);
        for s in output.subsets.iter().flatten() {
            if let Some(m) = &s.metrics {
                rows.extend(recall_rows(&s.name, m));
            }
        }
        write_csv(g, path, rows)?;
    }
    Ok(())
}

fn collapse(g: &GlobalArgs, a: &CollapseArgs) -> Result<()> {
    let corpus = load_corpus(&a.manifest)?;
    let head = a.head.as_deref().map(load_head).transpose()?;
    let report = collapse_diagnostic(&corpus, head.as_ref(), !a.no_self_pairs)?;
    write_json(g, &a.out, &report)?;
    if let Some(path) = &a.csv {
        write_csv(g, path, &report.by_event_count)?;
    }
    Ok(())
}
