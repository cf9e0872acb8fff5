use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use hipponet::data::{
    balance_and_augment, build_test_sets, read_nifti, select_test_subjects, write_nifti, write_sample, ClassPair,
    DatasetManifest, Diagnosis, ManifestSubject, RoiBank, SampleMeta, Side, SubjectRecord, Transform,
};
use hipponet::gradcheck::{check_layers, check_network, tiny_fusion_config, GradCheck};
use hipponet::harness::{
    curve_csvs, evaluate, load_run, reference_grid, render_table, sweep, sweep_table_csv, train, Dataset, RunReport,
    SetEvaluation,
};
use hipponet::model::{read_checkpoint, write_checkpoint, InputMode, Modality};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{write_echo, Config};
use crate::error::CliError;

/// Relative error bound every gradient check must stay below.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    write_file(path, serde_json::to_string_pretty(value).expect("serializable") + "\n")
}

fn modality_file_tag(m: Modality) -> &'static str {
    match m {
        Modality::Smri => "sMRI",
        Modality::MdDti => "MD",
    }
}

fn manifest_path(config: &Config) -> Result<&Path, CliError> {
    config
        .dataset
        .manifest
        .as_deref()
        .ok_or_else(|| CliError::config("dataset.manifest", "this command needs a dataset manifest"))
}

/// Loads and validates the manifest; also returns the directory its file
/// paths are relative to.
fn load_manifest(config: &Config) -> Result<(DatasetManifest, PathBuf), CliError> {
    let path = manifest_path(config)?;
    if !path.exists() {
        return Err(CliError::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let m = DatasetManifest::load(path).map_err(|e| match e {
        hipponet::data::DataError::Io(source) => CliError::io(path, source),
        other => CliError::Input(format!("{}: {other}", path.display())),
    })?;
    if m.roi_centers != config.roi.centers {
        return Err(CliError::Incompatible(format!(
            "roi.centers {:?} differ from the manifest's roi_centers {:?}",
            config.roi.centers, m.roi_centers
        )));
    }
    if m.k != config.dataset.k {
        return Err(CliError::Incompatible(format!(
            "dataset.k = {} but the manifest was prepared with k = {}",
            config.dataset.k, m.k
        )));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((m, base))
}

/// ROI bank and sample lists for the given pairs and modalities. Stored
/// augmentation and test-set provenance in the manifest take precedence
/// over regenerating them.
fn load_dataset(
    config: &Config,
    manifest: &DatasetManifest,
    base: &Path,
    roi_size: usize,
    pairs: &[ClassPair],
    modalities: &[Modality],
) -> Result<Dataset, CliError> {
    let wanted: BTreeSet<Diagnosis> = pairs.iter().flat_map(|p| p.classes()).collect();
    let max_shift = config.dataset.augment.max_shift as usize;
    let bank = manifest.load_bank(base, roi_size, max_shift, modalities, |s| wanted.contains(&s.diagnosis))?;
    let seed = config.sub_seeds().augmentation;
    let params = &config.dataset.augment;
    let plan = match &manifest.augmentation {
        Some(p) => p.clone(),
        None => balance_and_augment(&manifest.train_classes(), manifest.k, params, seed)?,
    };
    let tests = match &manifest.test_sets {
        Some(t) => t.clone(),
        None => build_test_sets(&manifest.test_classes(), config.dataset.test_copies, params, seed)?,
    };
    Ok(Dataset { bank, plan, tests })
}

pub fn synth(config: &Config, out: &Path) -> Result<(), CliError> {
    let sc = config.synth_config();
    sc.validate()?;
    let roster = sc.roster();
    let volumes = out.join("volumes");
    std::fs::create_dir_all(&volumes).map_err(|e| CliError::io(&volumes, e))?;
    let subjects = (0..roster.len())
        .into_par_iter()
        .map(|i| {
            let record = sc.subject(i)?;
            let mut files = BTreeMap::new();
            for (m, v) in &record.volumes {
                let rel = PathBuf::from("volumes").join(format!("{}_{}.nii", record.subject_id, modality_file_tag(*m)));
                write_nifti(&out.join(&rel), v)?;
                files.insert(*m, rel);
            }
            Ok(ManifestSubject {
                id: record.subject_id,
                diagnosis: record.diagnosis,
                files,
            })
        })
        .collect::<Result<Vec<_>, hipponet::data::DataError>>()?;
    let manifest = new_manifest(config, subjects)?;
    manifest.save(&out.join("manifest.json"))?;
    write_echo(config, out)?;
    eprintln!("wrote {} subjects and manifest.json to {}", roster.len(), out.display());
    Ok(())
}

fn new_manifest(config: &Config, subjects: Vec<ManifestSubject>) -> Result<DatasetManifest, CliError> {
    let classes = hipponet::data::group_by_class(subjects.iter().map(|s| (s.id.as_str(), s.diagnosis)));
    let test_subjects = select_test_subjects(&classes, config.dataset.test_per_class, config.seed)?;
    let manifest = DatasetManifest {
        seed: config.seed,
        k: config.dataset.k,
        roi_centers: config.roi.centers,
        subjects,
        test_subjects,
        augmentation: None,
        test_sets: None,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Reads a subject list CSV with header `id,diagnosis,smri,md_dti`. Paths
/// are relative to the list file; an empty cell means the modality is absent.
fn read_subject_list(path: &Path) -> Result<Vec<ManifestSubject>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let malformed = |line: usize, msg: String| CliError::Input(format!("{}:{line}: {msg}", path.display()));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "id,diagnosis,smri,md_dti" => {}
        _ => return Err(malformed(1, "expected header id,diagnosis,smri,md_dti".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(malformed(i + 1, format!("expected 4 fields, found {}", f.len())));
        }
        let diagnosis: Diagnosis = serde_json::from_value(serde_json::Value::String(f[1].to_string()))
            .map_err(|_| malformed(i + 1, format!("unknown diagnosis {:?}", f[1])))?;
        let mut files = BTreeMap::new();
        for (m, cell) in [(Modality::Smri, f[2]), (Modality::MdDti, f[3])] {
            if !cell.is_empty() {
                let p = base.join(cell);
                let abs = std::fs::canonicalize(&p).map_err(|e| CliError::io(&p, e))?;
                files.insert(m, abs);
            }
        }
        out.push(ManifestSubject {
            id: f[0].to_string(),
            diagnosis,
            files,
        });
    }
    Ok(out)
}

/// Parses every listed volume, checks that all share one shape and that the
/// shifted ROI windows fit, and writes a manifest with a seeded test split.
pub fn ingest(config: &Config, list: &Path, out: &Path) -> Result<(), CliError> {
    let subjects = read_subject_list(list)?;
    let max_shift = config.dataset.augment.max_shift as usize;
    let mut shape: Option<(String, Vec<usize>)> = None;
    for s in &subjects {
        let mut volumes = BTreeMap::new();
        for (m, p) in &s.files {
            let v = read_nifti(p, &s.id, *m).map_err(|e| match e {
                hipponet::data::DataError::Io(source) => CliError::io(p, source),
                other => CliError::Input(format!("{}: {other}", p.display())),
            })?;
            match &shape {
                None => shape = Some((s.id.clone(), v.grid.dims().to_vec())),
                Some((first, dims)) if dims != v.grid.dims() => {
                    return Err(CliError::Input(format!(
                        "{} has shape {:?} but {first} has {dims:?}",
                        p.display(),
                        v.grid.dims()
                    )))
                }
                Some(_) => {}
            }
            volumes.insert(*m, v);
        }
        let modalities: Vec<Modality> = volumes.keys().copied().collect();
        let record = SubjectRecord {
            subject_id: s.id.clone(),
            diagnosis: s.diagnosis,
            volumes,
        };
        RoiBank::new(config.roi.centers, config.roi.size, max_shift, &modalities).insert(&record)?;
    }
    let manifest = new_manifest(config, subjects)?;
    manifest.save(&out.join("manifest.json"))?;
    write_echo(config, out)?;
    eprintln!(
        "ingested {} subjects; manifest written to {}",
        manifest.subjects.len(),
        out.join("manifest.json").display()
    );
    Ok(())
}

/// Stores the untransformed ROI tensors of every subject for the configured
/// input mode in the sample store.
pub fn extract(config: &Config, out: &Path) -> Result<(), CliError> {
    let (manifest, base) = load_manifest(config)?;
    let mode = config.network.input_mode;
    let pipelines = mode.pipelines();
    let bank = manifest.load_bank(&base, config.roi.size, 0, &mode.modalities(), |_| true)?;
    let dir = out.join("samples");
    let sides: &[Side] = if mode.is_merged() { &[Side::Left, Side::Right] } else { &[Side::Left] };
    let mut count = 0;
    for s in &manifest.subjects {
        for &side in sides {
            let tensors = bank.materialize(&s.id, &Transform::IDENTITY, side, &pipelines)?;
            let name = if mode.is_merged() {
                format!("{}_{}", s.id, if side == Side::Left { "L" } else { "R" })
            } else {
                s.id.clone()
            };
            let meta = SampleMeta {
                subject_id: s.id.clone(),
                diagnosis: s.diagnosis,
                transform: Transform::IDENTITY,
                side,
                pipelines: pipelines.iter().map(|p| p.to_string()).collect(),
                shape: tensors[0].dims().to_vec(),
            };
            write_sample(&dir, &name, &tensors, &meta)?;
            count += 1;
        }
    }
    write_echo(config, out)?;
    eprintln!("extracted {count} samples of {} into {}", mode.label(), dir.display());
    Ok(())
}

/// Records the balanced training plan and the three test sets in a copy of
/// the manifest, after checking every shifted window fits its volume.
pub fn augment(config: &Config, out: &Path) -> Result<(), CliError> {
    let (mut manifest, base) = load_manifest(config)?;
    let seed = config.sub_seeds().augmentation;
    let params = &config.dataset.augment;
    let modalities = [Modality::Smri, Modality::MdDti];
    for s in &manifest.subjects {
        let present: Vec<Modality> = modalities.iter().copied().filter(|m| s.files.contains_key(m)).collect();
        let record = manifest.load_subject(&base, &s.id, &present)?;
        RoiBank::new(manifest.roi_centers, config.roi.size, params.max_shift as usize, &present).insert(&record)?;
    }
    let plan = balance_and_augment(&manifest.train_classes(), manifest.k, params, seed)?;
    let tests = build_test_sets(&manifest.test_classes(), config.dataset.test_copies, params, seed)?;
    let mut report = String::from("class  original  generated  train  test0  test1  test2\n");
    for (d, c) in &plan.counts {
        let n = |set: &[hipponet::data::AugmentedSample]| set.iter().filter(|s| s.diagnosis == *d).count();
        let _ = writeln!(
            report,
            "{:<5}  {:>8}  {:>9}  {:>5}  {:>5}  {:>5}  {:>5}",
            d.to_string(),
            c.original,
            c.generated,
            c.original + c.generated,
            n(&tests.test0),
            n(&tests.test1),
            n(&tests.test2)
        );
    }
    manifest.augmentation = Some(plan);
    manifest.test_sets = Some(tests);
    manifest.validate()?;
    // Stored paths stay valid from the new location.
    for s in &mut manifest.subjects {
        for p in s.files.values_mut() {
            if p.is_relative() {
                let joined = base.join(&*p);
                *p = std::fs::canonicalize(&joined).map_err(|e| CliError::io(&joined, e))?;
            }
        }
    }
    manifest.save(&out.join("manifest.json"))?;
    write_echo(config, out)?;
    print!("{report}");
    Ok(())
}

fn print_summary_line(name: &str, reports: &BTreeMap<String, hipponet::harness::MetricReports>) {
    let mut line = format!("{name}:");
    for (set, r) in reports {
        if let Some(a) = r.acc {
            let _ = write!(line, " {set} ACC {:.3} ± {:.3}", a.value, (a.ci_high - a.ci_low) / 2.0);
        }
    }
    println!("{line}");
}

pub fn train_command(config: &Config, out: &Path) -> Result<(), CliError> {
    let run = config.run_config();
    for w in run.warnings() {
        eprintln!("warning: {w}");
    }
    let (manifest, base) = load_manifest(config)?;
    let dataset = load_dataset(
        config,
        &manifest,
        &base,
        run.network.roi_size,
        &[run.classifier_pair],
        &run.network.input_mode.modalities(),
    )?;
    write_echo(config, out)?;
    let outcome = train(&run, &dataset)?;
    let summary = outcome.log.write(out)?;
    let ckpt = out.join("model.ckpt");
    let file = std::fs::File::create(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
    write_checkpoint(BufWriter::new(file), &outcome.network)?;
    write_json(&out.join("timings.json"), &outcome.timings)?;
    print_summary_line(&hipponet::harness::run_name(&run), &summary.reports);
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    checkpoint: String,
    classifier_pair: ClassPair,
    input_mode: InputMode,
    roi_size: usize,
    sets: &'a [SetEvaluation],
}

pub fn evaluate_command(config: &Config, checkpoint: &Path, out: &Path) -> Result<(), CliError> {
    let file = std::fs::File::open(checkpoint).map_err(|e| CliError::io(checkpoint, e))?;
    let net = read_checkpoint(BufReader::new(file))
        .map_err(|e| CliError::Input(format!("{}: {e}", checkpoint.display())))?
        .into_network()?;
    let nc = net.config().clone();
    if nc.roi_size != config.roi.size || nc.input_mode != config.network.input_mode {
        return Err(CliError::Incompatible(format!(
            "checkpoint expects ROI {} in {} mode but the config asks for ROI {} in {} mode",
            nc.roi_size,
            nc.input_mode,
            config.roi.size,
            config.network.input_mode
        )));
    }
    let (manifest, base) = load_manifest(config)?;
    let dataset = load_dataset(
        config,
        &manifest,
        &base,
        nc.roi_size,
        &[config.classifier_pair],
        &nc.input_mode.modalities(),
    )?;
    write_echo(config, out)?;
    let sets = evaluate(&net, &dataset, config.classifier_pair, config.training.eval_batch, &config.interval)?;
    write_json(
        &out.join("evaluation.json"),
        &EvaluationReport {
            checkpoint: checkpoint.display().to_string(),
            classifier_pair: config.classifier_pair,
            input_mode: nc.input_mode,
            roi_size: nc.roi_size,
            sets: &sets,
        },
    )?;
    for s in &sets {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
        println!(
            "{} n={} ACC {} SEN {} SPC {}",
            s.set,
            s.n,
            f(s.rates.accuracy),
            f(s.rates.sensitivity),
            f(s.rates.specificity)
        );
    }
    Ok(())
}

pub fn sweep_command(config: &Config, out: &Path) -> Result<(), CliError> {
    let base_run = config.run_config();
    let grid: Vec<_> = config
        .sweep
        .pairs
        .iter()
        .flat_map(|&pair| {
            let mut b = base_run.clone();
            b.classifier_pair = pair;
            reference_grid(&b, &config.sweep.modes)
        })
        .collect();
    let modalities: Vec<Modality> = {
        let set: BTreeSet<Modality> = config.sweep.modes.iter().flat_map(|m| m.modalities()).collect();
        set.into_iter().collect()
    };
    let (manifest, base) = load_manifest(config)?;
    write_echo(config, out)?;
    let dataset_for = |roi: usize| {
        load_dataset(config, &manifest, &base, roi, &config.sweep.pairs, &modalities)
            .map_err(|e| hipponet::harness::HarnessError::Config(e.to_string()))
    };
    let rows = sweep(&grid, &dataset_for, Some(out), config.sweep.parallel);
    write_file(&out.join("sweep.csv"), sweep_table_csv(&rows))?;
    write_json(&out.join("sweep.json"), &rows)?;
    let mut reports = Vec::new();
    for r in &rows {
        match &r.error {
            Some(e) => eprintln!("{}: failed: {e}", r.run),
            None => reports.push(load_run(&out.join(&r.run))?.row),
        }
    }
    print!("{}", render_table(&reports));
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} of {} runs failed; see sweep.csv", rows.len())));
    }
    Ok(())
}

#[derive(Serialize)]
struct GradcheckRow {
    name: String,
    count: usize,
    max_rel_error: f64,
    max_abs_diff: f64,
    passed: bool,
}

/// Worst result per check name over all seeds, in first-seen order.
fn worst_by_name(results: &[GradCheck]) -> Vec<GradcheckRow> {
    let mut order: Vec<String> = Vec::new();
    let mut worst: BTreeMap<String, GradcheckRow> = BTreeMap::new();
    for r in results {
        let e = worst.entry(r.name.clone()).or_insert_with(|| {
            order.push(r.name.clone());
            GradcheckRow {
                name: r.name.clone(),
                count: r.count,
                max_rel_error: 0.0,
                max_abs_diff: 0.0,
                passed: true,
            }
        });
        e.max_rel_error = e.max_rel_error.max(r.rel_error);
        e.max_abs_diff = e.max_abs_diff.max(r.max_abs_diff);
        e.passed &= r.passes(GRADCHECK_TOLERANCE);
    }
    order.into_iter().map(|n| worst.remove(&n).expect("present")).collect()
}

pub fn gradcheck(seeds: &[u64], out: Option<&Path>) -> Result<(), CliError> {
    let mut layer_results = Vec::new();
    let mut net_results = Vec::new();
    for &seed in seeds {
        layer_results.extend(check_layers(seed)?);
        net_results.extend(check_network(&tiny_fusion_config(), 4, seed)?);
    }
    let layers = worst_by_name(&layer_results);
    let network = worst_by_name(&net_results);
    let width = layers.iter().chain(&network).map(|r| r.name.len()).max().unwrap_or(4).max(4);
    println!("{:<width$}  {:>6}  {:>13}  status", "check", "count", "max_rel_error");
    for (section, rows) in [("layers", &layers), ("network", &network)] {
        println!("[{section}]");
        for r in rows {
            println!(
                "{:<width$}  {:>6}  {:>13.3e}  {}",
                r.name,
                r.count,
                r.max_rel_error,
                if r.passed { "ok" } else { "FAIL" }
            );
        }
    }
    if let Some(dir) = out {
        write_json(
            &dir.join("gradcheck.json"),
            &serde_json::json!({ "seeds": seeds, "tolerance": GRADCHECK_TOLERANCE, "layers": layers, "network": network }),
        )?;
    }
    let failed: Vec<&str> = layers
        .iter()
        .chain(&network)
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "relative error >= {GRADCHECK_TOLERANCE:e} in: {}",
            failed.join(", ")
        )))
    }
}

/// Run directories under `path`: itself when it holds a run log, otherwise
/// its immediate subdirectories that do, sorted by name.
fn run_dirs(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.join("runlog.csv").exists() || path.join("summary.json").exists() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| CliError::io(path, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("runlog.csv").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::NoEvaluations(format!(
            "no evaluations recorded: {} contains no run logs",
            path.display()
        )));
    }
    Ok(dirs)
}

pub fn report(paths: &[PathBuf], curves: Option<&Path>) -> Result<(), CliError> {
    let mut runs: Vec<RunReport> = Vec::new();
    for p in paths {
        for dir in run_dirs(p)? {
            runs.push(load_run(&dir)?);
        }
    }
    let rows: Vec<_> = runs.iter().map(|r| r.row.clone()).collect();
    print!("{}", render_table(&rows));
    if let Some(dir) = curves {
        for r in &runs {
            for (name, csv) in curve_csvs(&r.curve) {
                write_file(&dir.join(&r.row.run).join(format!("{name}.csv")), csv)?;
            }
        }
    }
    Ok(())
}
