use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use chrono::{DateTime, Utc};
use serde_json::{json, Value};

use scenediff::analysis::{
    emit_experiment_csv, greedy_select_indices, run_subset_experiment, BinWidth,
    SubsetExperimentSpec,
};
use scenediff::backends::{embed_checked, Embedder, SceneImageRef};
use scenediff::metric::{build_relevance_matrix, qoq};
use scenediff::pipeline::{embed_battery, PatrolConfig, PatrolPipeline};
use scenediff::{EmbeddingVector, QuestionBattery};

use crate::args::{AnalyzeArgs, InitReferenceArgs, QoqArgs, ScoreArgs, SelectArgs};
use crate::battery_file;
use crate::config::Settings;

/// What a command prints: a JSON document under `--json`, text otherwise.
pub struct Output {
    pub json: Value,
    pub human: String,
}

fn image_ref(path: &Path, spot_id: &str) -> anyhow::Result<SceneImageRef> {
    let modified = std::fs::metadata(path)
        .and_then(|m| m.modified())
        .with_context(|| format!("cannot read image {}", path.display()))?;
    let captured_at: DateTime<Utc> = modified.into();
    Ok(SceneImageRef::new(
        path.to_string_lossy(),
        captured_at,
        spot_id,
    )?)
}

fn battery(texts: Vec<String>, embedder: &dyn Embedder) -> anyhow::Result<QuestionBattery> {
    embed_battery(texts, embedder).context("cannot embed the question battery")
}

fn patrol(
    settings: &Settings,
    questions: Option<&Path>,
    threshold: Option<f64>,
) -> anyhow::Result<PatrolPipeline> {
    let Some(path) = questions.or(settings.questions.as_deref()) else {
        bail!("no question battery: pass --questions or set `questions` in the config");
    };
    let embedder = settings.embedder()?;
    let answerer = settings.answerer()?;
    let battery = battery(battery_file::read_questions(path)?, embedder.as_ref())?;
    let mut config = PatrolConfig::new(battery, &settings.store_dir);
    config.weighting = settings.weighting;
    config.threshold = threshold;
    config.parallelism = settings.parallelism;
    config.batch_size = settings.batch_size;
    Ok(PatrolPipeline::new(config, embedder, answerer)?)
}

pub fn init_reference(args: &InitReferenceArgs) -> anyhow::Result<Output> {
    let settings = Settings::resolve(&args.backend)?;
    let pipeline = patrol(&settings, args.questions.as_deref(), None)?;
    let image = image_ref(&args.image, &args.spot)?;
    let reg = pipeline.register_reference(&args.spot, &image)?;
    let mut human = format!(
        "registered spot {}: {} answers, battery {}\nwrote {}",
        reg.record.spot_id,
        reg.record.entries.len(),
        reg.record.battery_hash,
        reg.path.display()
    );
    if reg.replaced {
        human.push_str(" (replaced the previous reference)");
    }
    Ok(Output {
        json: json!({
            "spot_id": reg.record.spot_id,
            "battery_hash": reg.record.battery_hash,
            "questions": reg.record.entries.len(),
            "path": reg.path,
            "replaced": reg.replaced,
            "created_at": reg.record.created_at,
            "embedder": reg.record.embedder,
            "answerer": reg.record.answerer,
        }),
        human,
    })
}

pub fn score(args: &ScoreArgs) -> anyhow::Result<Output> {
    let settings = Settings::resolve(&args.backend)?;
    let threshold = settings.threshold_for(&args.spot, args.threshold);
    let pipeline = patrol(&settings, args.questions.as_deref(), threshold)?;
    let image = image_ref(&args.image, &args.spot)?;
    let report = pipeline.score_scene(&args.spot, &image)?;

    let mut human = format!(
        "spot {}: scene distance {:.6} ({} weighting, QoQ {:.4}, {} questions)\n",
        report.spot_id,
        report.scene_distance,
        report.weights.scheme(),
        report.qoq,
        report.questions.len()
    );
    if let Some(v) = &report.verdict {
        let state = if v.changed { "CHANGED" } else { "unchanged" };
        let _ = writeln!(human, "verdict: {state} (threshold {})", v.threshold);
        for c in v
            .top_contributors
            .iter()
            .take(5)
            .filter(|c| c.contribution > 0.0)
        {
            let _ = writeln!(
                human,
                "  {:.6}  {}  {:?} -> {:?}",
                c.contribution, c.question, c.reference_answer, c.current_answer
            );
        }
    }
    Ok(Output {
        json: serde_json::to_value(report.to_document())?,
        human: human.trim_end().into(),
    })
}

pub fn qoq_command(args: &QoqArgs) -> anyhow::Result<Output> {
    let settings = Settings::resolve(&args.backend)?;
    let embedder = settings.embedder()?;
    let full = battery(
        battery_file::read_questions(&args.questions)?,
        embedder.as_ref(),
    )?;
    let battery = match &args.subset {
        Some(indices) => full.subset(indices)?,
        None => full,
    };
    let value = qoq(&build_relevance_matrix(&battery)?);
    Ok(Output {
        json: json!({
            "qoq": value,
            "questions": battery.len(),
            "subset": args.subset,
            "battery_hash": battery.hash(),
        }),
        human: format!("QoQ {value:.6} over {} questions", battery.len()),
    })
}

pub fn analyze_subsets(args: &AnalyzeArgs) -> anyhow::Result<Output> {
    let settings = Settings::resolve(&args.backend)?;
    let embedder = settings.embedder()?;
    let lines = battery_file::read(&args.pool)?;
    let texts: Vec<String> = lines.iter().map(|l| l.question.clone()).collect();

    let (pool, current, reference) = match (&args.spot, &args.image) {
        (Some(spot), Some(image)) => {
            let pipeline = patrol(&settings, Some(&args.pool), None)?;
            let pair = pipeline.collect_answers(spot, &image_ref(image, spot)?)?;
            let pool = pipeline.config().battery.clone();
            (pool, pair.current_vectors, pair.reference.vectors())
        }
        (None, None) => {
            let answers: Option<Vec<&(String, String)>> =
                lines.iter().map(|l| l.answers.as_ref()).collect();
            let Some(answers) = answers else {
                bail!(
                    "{} has no answer columns on every line; pass --spot and --image to answer the pool",
                    args.pool.display()
                );
            };
            let reference: Vec<String> = answers.iter().map(|(r, _)| r.clone()).collect();
            let current: Vec<String> = answers.iter().map(|(_, c)| c.clone()).collect();
            let embed = |t: &[String]| -> anyhow::Result<Vec<EmbeddingVector>> {
                embed_checked(embedder.as_ref(), t).context("cannot embed pool answers")
            };
            let pool = battery(texts, embedder.as_ref())?;
            (pool, embed(&current)?, embed(&reference)?)
        }
        _ => bail!("--spot needs --image"),
    };

    let mut spec = SubsetExperimentSpec::new(pool);
    spec.subset_size = args.k;
    spec.num_sets = args.n;
    spec.rng_seed = args.seed;
    spec.bin_width = match (args.bin_width, args.bins) {
        (Some(w), _) => BinWidth::Fixed(w),
        (None, Some(n)) => BinWidth::Divisions(n),
        (None, None) => BinWidth::default(),
    };
    let result = run_subset_experiment(&spec, &current, &reference)?;
    let files = emit_experiment_csv(&result, &args.out_dir)?;

    let d = &result.diagnostics;
    let mut human = format!(
        "{} sets of {} from a pool of {}, QoQ range [{:.4}, {:.4}], bin width {:.4}\n",
        result.rows.len(),
        args.k,
        current.len(),
        d.qoq_min,
        d.qoq_max,
        d.bin_width
    );
    if d.degenerate_rows > 0 {
        let _ = writeln!(
            human,
            "{} degenerate sets left out of the relevance variance",
            d.degenerate_rows
        );
    }
    let _ = writeln!(
        human,
        "{:>10} {:>10} {:>6} {:>12} {:>12}",
        "qoq_lo", "qoq_hi", "count", "var_uniform", "var_relev"
    );
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
    for b in result.occupied_bins() {
        let _ = writeln!(
            human,
            "{:>10.4} {:>10.4} {:>6} {:>12} {:>12}",
            b.qoq_lo,
            b.qoq_hi,
            b.count,
            fmt(b.variance_uniform),
            fmt(b.variance_relevance)
        );
    }
    let _ = write!(
        human,
        "wrote {} and {}",
        files.subsets.display(),
        files.bins.display()
    );

    let bins: Vec<Value> = result
        .occupied_bins()
        .map(|b| {
            json!({
                "qoq_lo": b.qoq_lo,
                "qoq_hi": b.qoq_hi,
                "count": b.count,
                "var_uniform": b.variance_uniform,
                "var_relevance": b.variance_relevance,
            })
        })
        .collect();
    Ok(Output {
        json: json!({
            "k": args.k,
            "n": args.n,
            "seed": args.seed,
            "pool_size": current.len(),
            "files": { "subsets": files.subsets, "bins": files.bins },
            "diagnostics": {
                "degenerate_rows": d.degenerate_rows,
                "qoq_min": d.qoq_min,
                "qoq_max": d.qoq_max,
                "bin_width": d.bin_width,
            },
            "bins": bins,
        }),
        human,
    })
}

pub fn select_battery(args: &SelectArgs) -> anyhow::Result<Output> {
    let settings = Settings::resolve(&args.backend)?;
    let embedder = settings.embedder()?;
    let pool = battery(battery_file::read_questions(&args.pool)?, embedder.as_ref())?;
    let matrix = build_relevance_matrix(&pool)?;
    let indices = greedy_select_indices(&matrix, args.k)?;
    let chosen = pool.subset(&indices)?;
    let value = qoq(&build_relevance_matrix(&chosen)?);
    let questions: Vec<&str> = chosen.texts().collect();
    let mut human = format!(
        "# {} of {} questions, QoQ {value:.6}\n",
        chosen.len(),
        pool.len()
    );
    human.push_str(&questions.join("\n"));
    Ok(Output {
        json: json!({
            "k": args.k,
            "qoq": value,
            "indices": indices,
            "questions": questions,
            "battery_hash": chosen.hash(),
        }),
        human,
    })
}
