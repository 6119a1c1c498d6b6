use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use attrauth::adam::AdamConfig;
use attrauth::auth::{read_descriptors, roc_svg, run_protocol, write_descriptors, write_eer_table, write_roc_csv, Pairing};
use attrauth::budget::{
    bench_forward, binary_full_row, budget_report, ensemble_name, part_param_rows, render_bench_table,
    render_param_table, BudgetParams,
};
use attrauth::checkpoint::{read_checkpoint, write_checkpoint};
use attrauth::datapipe::{
    aligned_examples, part_examples, read_manifest, PartTable, Split, TrainingData, ALIGNED_SIZE,
};
use attrauth::discovery::{Dictionary, DictionaryConfig};
use attrauth::heads::{eval_accuracy, write_accuracy_csv, HeadSet, C_GRID};
use attrauth::pipeline::{
    embed_samples, extract_descriptors, fit_head_set, load_dictionaries, load_part_nets, part_checkpoint,
    read_video_manifest, Extractor, CHECKPOINT_EXT, DICTIONARY_EXT,
};
use attrauth::trainer::{self, TrainConfig, TrainReport};
use attrauth::datapipe::AugmentConfig;
use attrauth::{build, Family, Network, NetworkSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::*;
use crate::output::Outputs;

pub const SNAPSHOT: &str = "config.resolved.toml";

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(cli, a),
        Command::EvalAttrs(a) => eval_attrs(cli, a),
        Command::Discover(a) => discover(cli, a),
        Command::ExtractFeatures(a) => extract(cli, a),
        Command::Authenticate(a) => authenticate(cli, a),
        Command::Budget(a) => budget(cli, a),
        Command::Bench(a) => bench(cli, a),
        Command::Params(a) => params(cli, a),
    }
}

fn snapshot(cli: &Cli, out: &mut Outputs) -> Result<()> {
    let text = toml::to_string(cli).context("serialising the resolved config")?;
    std::fs::write(out.file(SNAPSHOT), text)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn load_table(path: Option<&Path>) -> Result<PartTable> {
    match path {
        Some(p) => PartTable::load(p).with_context(|| format!("reading part table {}", p.display())),
        None => Ok(PartTable::default_ibug68()),
    }
}

fn select_parts<'a>(table: &'a PartTable, names: &[String]) -> Result<Vec<&'a attrauth::datapipe::PartDefinition>> {
    if names.is_empty() {
        return Ok(table.parts.iter().collect());
    }
    names.iter().map(|n| Ok(table.part(n)?)).collect()
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let table = load_table(a.data.parts.as_deref())?;
    let samples = read_manifest(&a.data.manifest).with_context(|| format!("reading {}", a.data.manifest.display()))?;
    let config = TrainConfig {
        batch_size: a.batch_size,
        eval_every: a.eval_every,
        patience: a.patience,
        max_steps: a.max_steps,
        seed: cli.seed,
        optimizer: AdamConfig { lr: a.lr, ..AdamConfig::default() },
        augment: (!a.no_augment).then(AugmentConfig::default),
        normalization: a.normalization.into(),
    };
    config.validate()?;
    let family: Family = a.family.into();

    let jobs: Vec<(String, NetworkSpec, TrainingData)> = match &a.binary {
        Some(attr) => {
            let data = TrainingData {
                train: aligned_examples(&samples, &table.eyes, attr, Split::Train)?,
                dev: aligned_examples(&samples, &table.eyes, attr, Split::Dev)?,
            };
            let spec = NetworkSpec::binary(family, ALIGNED_SIZE, ALIGNED_SIZE)?;
            vec![(format!("Binary-{attr}"), spec, data)]
        }
        None => select_parts(&table, &a.part)?
            .into_iter()
            .map(|p| {
                let data = TrainingData {
                    train: part_examples(&samples, p, Split::Train)?,
                    dev: part_examples(&samples, p, Split::Dev)?,
                };
                let spec = NetworkSpec::multi(family.clone(), p.window.h, p.window.w, p.attributes.len())?;
                Ok((p.name.clone(), spec, data))
            })
            .collect::<Result<_>>()?,
    };
    for (name, _, data) in &jobs {
        if data.train.is_empty() || data.dev.is_empty() {
            bail!("{name}: the manifest needs both train and dev samples");
        }
    }

    let mut out = Outputs::create(&a.out)?;
    snapshot(cli, &mut out)?;
    table.save(out.file("parts.json"))?;
    let trained: Vec<(String, Network, TrainReport)> = jobs
        .par_iter()
        .map(|(name, spec, data)| {
            let result = match &a.resume {
                Some(dir) => {
                    let net = read_checkpoint(part_checkpoint(dir, name))
                        .with_context(|| format!("{name}: loading checkpoint to resume"))?;
                    if net.spec != *spec {
                        bail!("{name}: checkpoint in {} has a different architecture", dir.display());
                    }
                    trainer::train_from(net, data, &config)
                }
                None => trainer::train(spec, data, &config),
            };
            let (net, report) = result.with_context(|| format!("training {name}"))?;
            Ok((name.clone(), net, report))
        })
        .collect::<Result<_>>()?;
    for (name, net, report) in &trained {
        write_checkpoint(net, out.file(&format!("{name}.{CHECKPOINT_EXT}")))?;
        write_json(&out.file(&format!("{name}.report.json")), report)?;
        println!(
            "{name:<16} best dev accuracy {:.4} at step {} ({:?})",
            report.best_dev_accuracy, report.best_step, report.stop_reason
        );
    }
    out.commit();
    Ok(())
}

fn eval_attrs(cli: &Cli, a: &EvalAttrsArgs) -> Result<()> {
    let table = load_table(a.data.parts.as_deref())?;
    let samples = read_manifest(&a.data.manifest).with_context(|| format!("reading {}", a.data.manifest.display()))?;
    let nets = load_part_nets(&a.checkpoints, &table)?;
    let fitted = match &a.heads {
        Some(p) => {
            let mut h = HeadSet::load(p).with_context(|| format!("reading heads {}", p.display()))?;
            h.missing = a.missing.into();
            (h, false)
        }
        None => {
            let grid = if a.svm_c.is_empty() { C_GRID.to_vec() } else { a.svm_c.clone() };
            let train = embed_samples(&samples, Split::Train, &table, &nets)?;
            let dev = embed_samples(&samples, Split::Dev, &table, &nets)?;
            (fit_head_set(&train, &dev, &table, &grid, cli.seed, a.missing.into())?, true)
        }
    };
    let (heads, fresh) = fitted;
    let test = embed_samples(&samples, a.split.into(), &table, &nets)?;
    if test.is_empty() {
        bail!("no {:?} samples in the manifest", a.split);
    }
    let predictions = test.iter().map(|s| heads.predict(&s.embeddings)).collect::<attrauth::Result<Vec<_>>>()?;
    let labels: Vec<Vec<u8>> = test.iter().map(|s| s.labels.clone()).collect();
    let row = eval_accuracy(&a.method, &predictions, &labels)?;

    let mut out = Outputs::create(&a.out)?;
    snapshot(cli, &mut out)?;
    if fresh {
        heads.save(out.file("heads.json"))?;
    }
    write_accuracy_csv(std::slice::from_ref(&row), BufWriter::new(File::create(out.file("accuracy.csv"))?))?;
    write_json(&out.file("accuracy.json"), &row)?;
    println!("{}: average accuracy {:.4} over {} samples", a.method, row.average, test.len());
    out.commit();
    Ok(())
}

fn discover(cli: &Cli, a: &DiscoverArgs) -> Result<()> {
    let table = load_table(a.data.parts.as_deref())?;
    let samples = read_manifest(&a.data.manifest).with_context(|| format!("reading {}", a.data.manifest.display()))?;
    let nets = load_part_nets(&a.checkpoints, &table)?;
    let wanted: Vec<String> = select_parts(&table, &a.part)?
        .into_iter()
        .map(|p| p.name.clone())
        .filter(|n| nets.contains_key(n))
        .collect();
    if wanted.is_empty() {
        bail!("none of the selected parts has a checkpoint in {}", a.checkpoints.display());
    }
    let embedded = embed_samples(&samples, a.split.into(), &table, &nets)?;
    let cfg = DictionaryConfig { size: a.size, clusters: a.clusters, ssc_sparsity: a.sparsity, ..Default::default() };

    let mut dicts = Vec::new();
    for part in &wanted {
        let (embs, sources): (Vec<Vec<f32>>, Vec<String>) = embedded
            .iter()
            .filter_map(|s| s.embeddings.get(part).cloned().flatten().map(|e| (e, s.source.clone())))
            .unzip();
        let dict = Dictionary::build(part, &embs, &sources, &cfg, cli.seed).with_context(|| format!("clustering {part}"))?;
        dicts.push(dict);
    }

    let mut out = Outputs::create(&a.out)?;
    snapshot(cli, &mut out)?;
    for dict in &dicts {
        dict.save(out.file(&format!("{}.{DICTIONARY_EXT}", dict.part)))?;
        write_json(&out.file(&format!("{}.montage.json", dict.part)), &dict.montage())?;
        let mut sizes = vec![0usize; dict.k];
        for &l in &dict.labels {
            sizes[l] += 1;
        }
        println!("{:<16} {} atoms, cluster sizes {:?}", dict.part, dict.labels.len(), sizes);
    }
    out.commit();
    Ok(())
}

fn extract(cli: &Cli, a: &ExtractArgs) -> Result<()> {
    let table = load_table(a.parts.as_deref())?;
    let nets = load_part_nets(&a.checkpoints, &table)?;
    let videos = read_video_manifest(&a.videos).with_context(|| format!("reading {}", a.videos.display()))?;
    let extractor = match a.mode {
        FeatureMode::Attrs => {
            let p = a.heads.as_ref().context("--heads is required in attrs mode")?;
            Extractor::Attributes(HeadSet::load(p).with_context(|| format!("reading heads {}", p.display()))?)
        }
        FeatureMode::Discattrs => {
            let dir = a.dictionaries.as_ref().context("--dictionaries is required in discattrs mode")?;
            Extractor::DiscAttrs { dictionaries: load_dictionaries(dir, &table)?, sparsity: a.sparsity }
        }
    };
    let descriptors = extract_descriptors(&videos, &table, &nets, &extractor)?;

    let mut out = Outputs::create(&a.out)?;
    snapshot(cli, &mut out)?;
    write_descriptors(out.file("descriptors.jsonl"), &descriptors)?;
    println!("{} video descriptors of dimension {}", descriptors.len(), descriptors.first().map_or(0, |d| d.feature.len()));
    out.commit();
    Ok(())
}

fn method_and_path(spec: &str) -> (String, &Path) {
    match spec.split_once('=') {
        Some((m, p)) if !m.is_empty() => (m.to_string(), Path::new(p)),
        _ => {
            let p = Path::new(spec);
            (p.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned()), p)
        }
    }
}

fn authenticate(cli: &Cli, a: &AuthArgs) -> Result<()> {
    let pairings: Vec<Pairing> = if a.pairing.is_empty() {
        vec![Pairing::Altogether]
    } else {
        a.pairing.iter().map(|p| p.parse()).collect::<attrauth::Result<_>>()?
    };
    let mut reports = Vec::new();
    for spec in &a.descriptors {
        let (method, path) = method_and_path(spec);
        let videos = read_descriptors(path).with_context(|| format!("reading {}", path.display()))?;
        reports.push(run_protocol(&method, &videos, &pairings).with_context(|| format!("method {method}"))?);
    }

    let mut out = Outputs::create(&a.out)?;
    snapshot(cli, &mut out)?;
    write_json(&out.file("eer.json"), &reports)?;
    write_eer_table(&reports, BufWriter::new(File::create(out.file("eer.csv"))?))?;
    write_roc_csv(&reports, BufWriter::new(File::create(out.file("roc.csv"))?))?;
    if !a.no_plot {
        let curves: Vec<(String, &attrauth::auth::RocCurve)> = reports
            .iter()
            .flat_map(|r| r.rows.iter().zip(&r.curves).map(move |(row, c)| (format!("{} {}", r.method, row.pairing), c)))
            .collect();
        std::fs::write(out.file("roc.svg"), roc_svg(&curves))?;
    }
    let mut table = Vec::new();
    write_eer_table(&reports, &mut table)?;
    print!("{}", String::from_utf8_lossy(&table));
    out.commit();
    Ok(())
}

fn budget(cli: &Cli, a: &BudgetArgs) -> Result<()> {
    let params = BudgetParams { capacity_wh: a.capacity_wh, p_n: a.pn, p_d: a.pd, alpha: a.alpha, beta: a.beta, t_a: a.ta };
    let report = budget_report(&params)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!(
            "{:>13} {:>8} {:>8} {:>6} {:>6} {:>8} {:>12} {:>18}",
            "capacity (Wh)", "P_n (W)", "P_d (W)", "alpha", "beta", "T_a (s)", "battery (h)", "auth interval (s)"
        );
        let interval = report.auth_interval_s.map_or_else(|| "never".to_string(), |s| format!("{s:.2}"));
        println!(
            "{:>13.2} {:>8.2} {:>8.2} {:>6.2} {:>6.2} {:>8.2} {:>12.2} {:>18}",
            a.capacity_wh, a.pn, a.pd, a.alpha, a.beta, a.ta, report.battery_hours, interval
        );
    }
    if let Some(dir) = &a.out {
        let mut out = Outputs::create(dir)?;
        snapshot(cli, &mut out)?;
        write_json(&out.file("budget.json"), &report)?;
        out.commit();
    }
    Ok(())
}

fn random_input(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(&[h, w, 3], |_| rng.random::<f32>())
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let table = load_table(a.parts.as_deref())?;
    let family: Family = a.family.into();
    let nets: BTreeMap<String, Network> = match &a.checkpoints {
        Some(dir) => load_part_nets(dir, &table)?,
        None => table
            .parts
            .iter()
            .map(|p| {
                let spec = NetworkSpec::multi(family.clone(), p.window.h, p.window.w, p.attributes.len())?;
                Ok((p.name.clone(), build(&spec, cli.seed)?))
            })
            .collect::<attrauth::Result<_>>()?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let inputs: Vec<(String, Tensor)> = table
        .parts
        .iter()
        .filter(|p| nets.contains_key(&p.name))
        .map(|p| (p.name.clone(), random_input(p.window.h, p.window.w, &mut rng)))
        .collect();
    let prefix = family.prefix();
    let parts: Vec<(String, &Network, &Tensor)> =
        inputs.iter().map(|(n, x)| (format!("{prefix}-{n}"), &nets[n], x)).collect();
    let binary_net = a
        .binary
        .then(|| build(&NetworkSpec::binary(family.clone(), ALIGNED_SIZE, ALIGNED_SIZE)?, cli.seed))
        .transpose()?;
    let face = random_input(ALIGNED_SIZE, ALIGNED_SIZE, &mut rng);
    let binary_name = binary_full_row(&family)?.network;
    let binary = binary_net.as_ref().map(|n| (binary_name.clone(), n, &face));

    let report = if a.parallel {
        bench_forward(&parts, binary, a.repetitions, a.warmup, true)?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()?
            .install(|| bench_forward(&parts, binary, a.repetitions, a.warmup, false))?
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", render_bench_table(&report, ensemble_name(&family)));
    }
    if let Some(dir) = &a.out {
        let mut out = Outputs::create(dir)?;
        snapshot(cli, &mut out)?;
        write_json(&out.file("bench.json"), &report)?;
        out.commit();
    }
    Ok(())
}

#[derive(Serialize)]
struct ParamsTable {
    family: &'static str,
    ensemble: &'static str,
    rows: Vec<attrauth::budget::ParamRow>,
    total_params: usize,
    total_macs: u64,
    binary: attrauth::budget::ParamRow,
}

fn params(cli: &Cli, a: &ParamsArgs) -> Result<()> {
    let table = load_table(a.parts.as_deref())?;
    let families = match a.family {
        FamilyChoice::Deep => vec![(Family::Deep, "deep")],
        FamilyChoice::Wide => vec![(Family::Wide, "wide")],
        FamilyChoice::Both => vec![(Family::Deep, "deep"), (Family::Wide, "wide")],
    };
    let mut tables = Vec::new();
    for (family, label) in families {
        let rows = part_param_rows(&table, &family)?;
        tables.push(ParamsTable {
            family: label,
            ensemble: ensemble_name(&family),
            total_params: rows.iter().map(|r| r.params).sum(),
            total_macs: rows.iter().map(|r| r.macs).sum(),
            binary: binary_full_row(&family)?,
            rows,
        });
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&tables)?);
    } else {
        for (i, t) in tables.iter().enumerate() {
            if i > 0 {
                println!();
            }
            print!("{}", render_param_table(&t.rows, t.ensemble, Some(&t.binary)));
        }
    }
    if let Some(dir) = &a.out {
        let mut out = Outputs::create(dir)?;
        snapshot(cli, &mut out)?;
        write_json(&out.file("params.json"), &tables)?;
        out.commit();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_specs() {
        assert_eq!(method_and_path("MultiDeep=a/b.jsonl"), ("MultiDeep".into(), Path::new("a/b.jsonl")));
        assert_eq!(method_and_path("runs/deep.jsonl"), ("deep".into(), Path::new("runs/deep.jsonl")));
        assert_eq!(method_and_path("=x.jsonl").0, "=x");
    }
}
