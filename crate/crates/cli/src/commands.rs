//! One function per subcommand. Each resolves its settings, reads inputs
//! through a [`Run`] so they are hashed, writes artifacts and the manifest,
//! and returns the paths it wrote.

use std::path::{Path, PathBuf};
use std::time::Instant;

use eqcov::calibrator::parse_weighting;
use eqcov::metrics::canonical_json;
use eqcov::{
    evaluate as score, fit as fit_model, generate_synthetic, read_dataset, split_dataset,
    write_dataset, CalibrationConfig, Calibrator, CsvSchema, Dataset, EvalReport, FitConfig,
    GroupSet, IntervalSet, LabelDomain, Method, Observation, OptimizerConfig, QuantileLevels,
    QuantileModel, SplitSpec, StoredBands, SyntheticSpec, ThresholdArtifact,
};
use serde_json::Value;

use crate::config::{DomainArg, KvConfig, Reals, Resolver};
use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::tables::{fixed, opt_fixed, to_csv, to_text};
use crate::{CalibrateArgs, CompareArgs, EvaluateArgs, FitArgs, SimulateArgs, SweepArgs};
use crate::{CalibrationArgs, CommonArgs, DataArgs};

const DEFAULT_DOMAIN: (f64, f64) = (0.0, 63.0);

/// Offsets the split shuffle from the generator stream of the same seed.
const SPLIT_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

fn setup(common: &CommonArgs) -> CliResult<(KvConfig, PathBuf)> {
    let cfg = KvConfig::load(common.config.as_deref())?;
    let out_dir = match &common.out_dir {
        Some(p) => p.clone(),
        None => cfg
            .get::<PathBuf>("out_dir")?
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    Ok((cfg, out_dir))
}

fn path_setting(cfg: &KvConfig, key: &str, flag: &Option<PathBuf>) -> CliResult<Option<PathBuf>> {
    match flag {
        Some(p) => Ok(Some(p.clone())),
        None => cfg.get::<PathBuf>(key),
    }
}

fn required_path(cfg: &KvConfig, key: &str, flag: &Option<PathBuf>) -> CliResult<PathBuf> {
    path_setting(cfg, key, flag)?
        .ok_or_else(|| CliError::Usage(format!("missing --{}", key.replace('_', "-"))))
}

fn default_domain() -> DomainArg {
    DomainArg(LabelDomain {
        min: DEFAULT_DOMAIN.0,
        max: DEFAULT_DOMAIN.1,
    })
}

struct DataSettings {
    attribute_col: String,
    domain: LabelDomain,
    groups: Option<PathBuf>,
}

fn data_settings(r: &mut Resolver, cfg: &KvConfig, a: &DataArgs) -> CliResult<DataSettings> {
    Ok(DataSettings {
        attribute_col: r.pick(
            "attribute_col",
            a.attribute_col.clone(),
            "group".to_string(),
        )?,
        domain: r.pick("label_domain", a.label_domain, default_domain())?.0,
        groups: path_setting(cfg, "groups", &a.groups)?,
    })
}

fn calibration_config(
    r: &mut Resolver,
    a: &CalibrationArgs,
    domain: LabelDomain,
) -> CliResult<CalibrationConfig> {
    let alpha = r.pick("alpha", a.alpha, 0.1)?;
    let bins = r.pick("bins", a.bins, 4usize)?;
    let weighting = r.pick(
        "weighting",
        a.weighting.clone(),
        "cell_conformal".to_string(),
    )?;
    let max_iters = r.pick_opt("max_iters", a.max_iters)?;
    let stop_on_slope_crossover =
        r.pick("slope_crossover", a.slope_crossover.then_some(true), false)?;
    let mut c = CalibrationConfig::new(alpha, bins, domain)?;
    c.optimizer = OptimizerConfig {
        weighting: parse_weighting(&weighting)?,
        max_iters,
        stop_on_slope_crossover,
    };
    Ok(c)
}

/// Reads a `group,name` sidecar; its row count declares the groups.
fn read_groups(run: &mut Run, path: &Path) -> CliResult<GroupSet> {
    let bytes = run.input(path)?;
    let count = String::from_utf8_lossy(&bytes)
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .count();
    Ok(GroupSet::read_sidecar(bytes.as_slice(), count)?)
}

fn read_data(
    run: &mut Run,
    path: &Path,
    d: &DataSettings,
    domain: LabelDomain,
    groups: Option<usize>,
) -> CliResult<Dataset> {
    let bytes = run.input(path)?;
    let mut schema = CsvSchema::new(domain);
    schema.group = d.attribute_col.clone();
    schema.group_count = groups;
    Ok(read_dataset(bytes.as_slice(), &schema)?)
}

fn load_model(run: &mut Run, path: Option<&Path>) -> CliResult<Option<QuantileModel>> {
    path.map(|p| {
        let bytes = run.input(p)?;
        Ok(QuantileModel::from_json(&String::from_utf8_lossy(&bytes))?)
    })
    .transpose()
}

/// Bands from the model when given, else from the CSV's own band columns.
fn observations(
    ds: &Dataset,
    model: Option<&QuantileModel>,
    alpha: f64,
) -> CliResult<Vec<Observation>> {
    Ok(match model {
        Some(m) => ds.observations(&m.bands(alpha))?,
        None => ds.observations(&StoredBands)?,
    })
}

fn csv_bytes(ds: &Dataset) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    Ok(buf)
}

fn group_names(groups: Option<GroupSet>, count: usize) -> CliResult<Vec<String>> {
    let set = match groups {
        Some(g) if g.len() == count => g,
        Some(g) => {
            return Err(CliError::Usage(format!(
                "groups sidecar declares {} groups, data has {count}",
                g.len()
            )));
        }
        None => GroupSet::anonymous(count)?,
    };
    Ok(set.names().to_vec())
}

pub fn simulate(a: &SimulateArgs) -> CliResult<Vec<PathBuf>> {
    let (cfg, out_dir) = setup(&a.common)?;
    let mut r = Resolver::new(&cfg);
    let seed = r.pick("seed", a.common.seed, 0u64)?;
    let n = r.pick("n", a.n, 10_000usize)?;
    let group_probs = r.pick("group_probs", a.group_probs.clone(), Reals(vec![0.5, 0.5]))?;
    let noise_scale = r.pick("noise_scale", a.noise_scale.clone(), Reals(vec![1.0, 2.0]))?;
    let feature_dim = r.pick("feature_dim", a.feature_dim, 4usize)?;
    let signal_scale = r.pick("signal_scale", a.signal_scale, 3.0)?;
    let domain = r.pick("label_domain", a.label_domain, default_domain())?.0;
    let Reals(split) = r.pick("split", a.split.clone(), Reals(vec![0.2, 0.4, 0.4]))?;
    let fractions: [f64; 3] = split.as_slice().try_into().map_err(|_| {
        CliError::Usage(format!(
            "--split needs three fractions, got {}",
            split.len()
        ))
    })?;
    let spec = SyntheticSpec {
        n,
        group_probs: group_probs.0,
        feature_dim,
        noise_scale: noise_scale.0,
        label_domain: domain,
        signal_scale,
        seed,
    };
    spec.validate()?;
    let split_seed = seed.wrapping_add(SPLIT_SEED_OFFSET);
    let split_spec = SplitSpec::new(fractions, split_seed)?;

    let mut run = Run::start("simulate", &out_dir)?;
    run.seed("generate", seed);
    run.seed("split", split_seed);
    run.config(r.resolved);
    let t = Instant::now();
    let data = generate_synthetic(&spec)?.dataset;
    let (train, cal, test) = split_dataset(&data, &split_spec)?;
    run.time("generate", t);

    let mut written = Vec::new();
    for (name, part) in [
        ("train.csv", &train),
        ("cal.csv", &cal),
        ("test.csv", &test),
    ] {
        written.push(run.write(name, &csv_bytes(part)?)?);
    }
    let mut groups = Vec::new();
    data.groups().write_sidecar(&mut groups)?;
    written.push(run.write("groups.csv", &groups)?);
    written.push(run.finish()?);
    Ok(written)
}

pub fn fit(a: &FitArgs) -> CliResult<Vec<PathBuf>> {
    let (cfg, out_dir) = setup(&a.common)?;
    let mut r = Resolver::new(&cfg);
    let seed = r.pick("seed", a.common.seed, 0u64)?;
    let d = data_settings(&mut r, &cfg, &a.data)?;
    let alpha = r.pick("alpha", a.alpha, 0.1)?;
    let defaults = FitConfig::default();
    let epochs = r.pick("epochs", a.epochs, defaults.epochs)?;
    let lr = r.pick("lr", a.lr, defaults.lr)?;
    let levels99 = r.pick("levels99", a.levels99.then_some(true), false)?;
    let train_path = required_path(&cfg, "train", &a.train)?;
    let levels = if levels99 {
        QuantileLevels::grid99(alpha)?
    } else {
        QuantileLevels::for_alpha(alpha)?
    };

    let mut run = Run::start("fit", &out_dir)?;
    run.seed("fit", seed);
    run.config(r.resolved);
    let groups = d
        .groups
        .as_deref()
        .map(|p| read_groups(&mut run, p))
        .transpose()?;
    let train = read_data(
        &mut run,
        &train_path,
        &d,
        d.domain,
        groups.as_ref().map(GroupSet::len),
    )?;
    let t = Instant::now();
    let model = fit_model(&train, &levels, &FitConfig { lr, epochs, seed })?;
    run.time("fit", t);
    let mut json = model.to_json()?;
    json.push('\n');
    let written = vec![run.write("model.json", json.as_bytes())?, run.finish()?];
    Ok(written)
}

pub fn calibrate(a: &CalibrateArgs) -> CliResult<Vec<PathBuf>> {
    let (cfg, out_dir) = setup(&a.common)?;
    let mut r = Resolver::new(&cfg);
    let seed = r.pick("seed", a.common.seed, 0u64)?;
    let d = data_settings(&mut r, &cfg, &a.data)?;
    let method: Method = r
        .pick("method", a.method.clone(), "fuq".to_string())?
        .parse()?;
    let cal_cfg = calibration_config(&mut r, &a.calibration, d.domain)?;
    let cal_path = required_path(&cfg, "cal", &a.cal)?;
    let model_path = path_setting(&cfg, "model", &a.model)?;

    let mut run = Run::start("calibrate", &out_dir)?;
    run.seed("calibrate", seed);
    run.config(r.resolved);
    let model = load_model(&mut run, model_path.as_deref())?;
    let groups = d
        .groups
        .as_deref()
        .map(|p| read_groups(&mut run, p))
        .transpose()?;
    let cal = read_data(
        &mut run,
        &cal_path,
        &d,
        d.domain,
        groups.as_ref().map(GroupSet::len),
    )?;
    let obs = observations(&cal, model.as_ref(), cal_cfg.alpha)?;
    let t = Instant::now();
    let calibrator = Calibrator::fit(method, &obs, cal.group_count(), &cal_cfg)?;
    run.time("calibrate", t);
    let artifact = calibrator.to_artifact(Some(seed), run.input_hashes());
    let written = vec![
        run.write("thresholds.json", artifact.to_json()?.as_bytes())?,
        run.finish()?,
    ];
    Ok(written)
}

fn report_json(
    method: Method,
    alpha: f64,
    names: &[String],
    report: &EvalReport,
) -> CliResult<String> {
    let mut v = serde_json::to_value(report)?;
    if let Value::Object(map) = &mut v {
        map.insert("method".into(), Value::from(method.as_str()));
        map.insert("alpha".into(), Value::from(alpha));
        map.insert("group_names".into(), Value::from(names.to_vec()));
    }
    Ok(canonical_json(&v))
}

fn report_csv(names: &[String], report: &EvalReport) -> CliResult<Vec<u8>> {
    let header: Vec<String> = [
        "scope",
        "group",
        "bin",
        "n",
        "covered",
        "picp",
        "mpiw",
        "hull_mpiw",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = vec![vec![
        "overall".into(),
        String::new(),
        String::new(),
        report.n_test.to_string(),
        report.covered.to_string(),
        fixed(report.picp),
        fixed(report.mpiw),
        fixed(report.hull_mpiw),
    ]];
    for g in &report.per_group {
        rows.push(vec![
            "group".into(),
            names[g.group].clone(),
            String::new(),
            g.n.to_string(),
            g.covered.to_string(),
            fixed(g.picp),
            fixed(g.mpiw),
            fixed(g.hull_mpiw),
        ]);
    }
    for (m, row) in report.beta.iter().enumerate() {
        for (s, beta) in row.iter().enumerate() {
            rows.push(vec![
                "cell".into(),
                names[s].clone(),
                m.to_string(),
                report.bin_counts[m][s].to_string(),
                report.bin_covered[m][s].to_string(),
                opt_fixed(*beta),
                String::new(),
                String::new(),
            ]);
        }
    }
    to_csv(&header, &rows)
}

fn predictions_csv(test: &Dataset, preds: &[IntervalSet]) -> CliResult<Vec<u8>> {
    let header: Vec<String> = [
        "id",
        "group",
        "y",
        "components",
        "fallback",
        "covered",
        "width",
    ]
    .map(String::from)
    .to_vec();
    let rows: Vec<Vec<String>> = test
        .records()
        .iter()
        .zip(preds)
        .map(|(rec, p)| {
            vec![
                rec.id.clone(),
                rec.group.to_string(),
                rec.y.to_string(),
                p.to_string(),
                p.fallback().map(|f| f.to_string()).unwrap_or_default(),
                u8::from(p.contains(rec.y)).to_string(),
                p.total_width().to_string(),
            ]
        })
        .collect();
    to_csv(&header, &rows)
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<Vec<PathBuf>> {
    let (cfg, out_dir) = setup(&a.common)?;
    let mut r = Resolver::new(&cfg);
    let d = data_settings(&mut r, &cfg, &a.data)?;
    let thresholds_path = required_path(&cfg, "thresholds", &a.thresholds)?;
    let test_path = required_path(&cfg, "test", &a.test)?;
    let model_path = path_setting(&cfg, "model", &a.model)?;

    let mut run = Run::start("evaluate", &out_dir)?;
    run.config(r.resolved);
    let artifact =
        ThresholdArtifact::from_json(&String::from_utf8_lossy(&run.input(&thresholds_path)?))?;
    let calibrator = Calibrator::from_artifact(&artifact)?;
    let model = load_model(&mut run, model_path.as_deref())?;
    let groups = d
        .groups
        .as_deref()
        .map(|p| read_groups(&mut run, p))
        .transpose()?;
    let declared = calibrator
        .group_count()
        .or(groups.as_ref().map(GroupSet::len));
    let test = read_data(&mut run, &test_path, &d, calibrator.domain(), declared)?;
    let s = test.group_count();
    let names = group_names(groups, s)?;
    let obs = observations(&test, model.as_ref(), calibrator.alpha())?;
    let t = Instant::now();
    let preds = calibrator.predict_all(&obs)?;
    let report = score(&obs, &preds, &calibrator.partition()?, s)?;
    run.time("evaluate", t);

    let written = vec![
        run.write(
            "report.json",
            report_json(calibrator.method(), calibrator.alpha(), &names, &report)?.as_bytes(),
        )?,
        run.write("report.csv", &report_csv(&names, &report)?)?,
        run.write("predictions.csv", &predictions_csv(&test, &preds)?)?,
        run.finish()?,
    ];
    Ok(written)
}

fn parse_methods(s: &str) -> CliResult<Vec<Method>> {
    let methods: Vec<Method> = s
        .split(',')
        .map(|m| m.trim().parse())
        .collect::<Result<_, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Usage("no methods requested".into()));
    }
    Ok(methods)
}

pub fn compare(a: &CompareArgs) -> CliResult<Vec<PathBuf>> {
    let (cfg, out_dir) = setup(&a.common)?;
    let mut r = Resolver::new(&cfg);
    let d = data_settings(&mut r, &cfg, &a.data)?;
    let cal_cfg = calibration_config(&mut r, &a.calibration, d.domain)?;
    let methods = parse_methods(&r.pick(
        "methods",
        a.methods.clone(),
        "cp,cqr,cqr_groupwise,fuq".to_string(),
    )?)?;
    let cal_path = required_path(&cfg, "cal", &a.cal)?;
    let test_path = required_path(&cfg, "test", &a.test)?;
    let model_path = path_setting(&cfg, "model", &a.model)?;

    let mut run = Run::start("compare", &out_dir)?;
    run.config(r.resolved);
    let model = load_model(&mut run, model_path.as_deref())?;
    let groups = d
        .groups
        .as_deref()
        .map(|p| read_groups(&mut run, p))
        .transpose()?;
    let cal = read_data(
        &mut run,
        &cal_path,
        &d,
        d.domain,
        groups.as_ref().map(GroupSet::len),
    )?;
    let s = cal.group_count();
    let test = read_data(&mut run, &test_path, &d, d.domain, Some(s))?;
    let names = group_names(groups, s)?;
    let cal_obs = observations(&cal, model.as_ref(), cal_cfg.alpha)?;
    let test_obs = observations(&test, model.as_ref(), cal_cfg.alpha)?;

    let mut header: Vec<String> = [
        "method",
        "n_test",
        "picp",
        "picp_percent",
        "mpiw",
        "hull_mpiw",
    ]
    .map(String::from)
    .to_vec();
    header.extend(names.iter().map(|n| format!("picp_{n}")));
    header.extend(["gap", "fallbacks"].map(String::from));
    let mut rows = Vec::new();
    for method in methods {
        let t = Instant::now();
        let c = Calibrator::fit(method, &cal_obs, s, &cal_cfg)?;
        let preds = c.predict_all(&test_obs)?;
        let rep = score(&test_obs, &preds, &c.partition()?, s)?;
        run.time(method.as_str(), t);
        let mut row = vec![
            method.to_string(),
            rep.n_test.to_string(),
            fixed(rep.picp),
            format!("{:.2}", rep.picp_percent),
            fixed(rep.mpiw),
            fixed(rep.hull_mpiw),
        ];
        row.extend(rep.per_group.iter().map(|g| fixed(g.picp)));
        row.push(opt_fixed(rep.picp_gap));
        row.push(rep.fallback_count.to_string());
        rows.push(row);
    }
    let written = vec![
        run.write("comparison.csv", &to_csv(&header, &rows)?)?,
        run.write("comparison.txt", to_text(&header, &rows).as_bytes())?,
        run.finish()?,
    ];
    Ok(written)
}

pub fn sweep_m(a: &SweepArgs) -> CliResult<Vec<PathBuf>> {
    let (cfg, out_dir) = setup(&a.common)?;
    let mut r = Resolver::new(&cfg);
    let seed = r.pick("seed", a.common.seed, 0u64)?;
    let d = data_settings(&mut r, &cfg, &a.data)?;
    let base = calibration_config(&mut r, &a.calibration, d.domain)?;
    let min_bins = r.pick("min_bins", a.min_bins, 1usize)?;
    let max_bins = r.pick("max_bins", a.max_bins, 8usize)?;
    if min_bins == 0 || min_bins > max_bins {
        return Err(CliError::Usage(format!(
            "bin range {min_bins}..={max_bins} is empty or starts at 0"
        )));
    }
    let cal_path = required_path(&cfg, "cal", &a.cal)?;
    let model_path = path_setting(&cfg, "model", &a.model)?;

    let mut run = Run::start("sweep-m", &out_dir)?;
    run.seed("split", seed);
    run.config(r.resolved);
    let model = load_model(&mut run, model_path.as_deref())?;
    let groups = d
        .groups
        .as_deref()
        .map(|p| read_groups(&mut run, p))
        .transpose()?;
    let cal = read_data(
        &mut run,
        &cal_path,
        &d,
        d.domain,
        groups.as_ref().map(GroupSet::len),
    )?;
    let s = cal.group_count();
    let names = group_names(groups, s)?;
    let (_, tune, held_out) = split_dataset(&cal, &SplitSpec::new([0.0, 0.5, 0.5], seed)?)?;
    let tune_obs = observations(&tune, model.as_ref(), base.alpha)?;
    let val_obs = observations(&held_out, model.as_ref(), base.alpha)?;

    let mut bins: Vec<usize> = (min_bins..=max_bins).collect();
    if min_bins > 1 {
        bins.insert(0, 1);
    }
    let mut header: Vec<String> = [
        "bins",
        "status",
        "n_tune",
        "n_val",
        "picp",
        "mpiw",
        "gap",
        "iterations",
    ]
    .map(String::from)
    .to_vec();
    header.extend(names.iter().map(|n| format!("picp_{n}")));
    let mut rows = Vec::new();
    for m in bins {
        let t = Instant::now();
        let cfg_m = CalibrationConfig { bins: m, ..base };
        let outcome = Calibrator::fit(Method::Fuq, &tune_obs, s, &cfg_m).and_then(|c| {
            let preds = c.predict_all(&val_obs)?;
            let rep = score(&val_obs, &preds, &c.partition()?, s)?;
            let iterations = match &c {
                Calibrator::Table {
                    trace: Some(tr), ..
                } => tr.iterations,
                _ => 0,
            };
            Ok((rep, iterations))
        });
        run.time(&format!("bins_{m}"), t);
        let mut row = vec![m.to_string()];
        match outcome {
            Ok((rep, iterations)) => {
                row.extend([
                    "ok".to_string(),
                    tune_obs.len().to_string(),
                    val_obs.len().to_string(),
                    fixed(rep.picp),
                    fixed(rep.mpiw),
                    opt_fixed(rep.picp_gap),
                    iterations.to_string(),
                ]);
                row.extend(rep.per_group.iter().map(|g| fixed(g.picp)));
            }
            Err(e) if !e.is_numerical() => {
                row.extend([
                    e.kind().to_string(),
                    tune_obs.len().to_string(),
                    val_obs.len().to_string(),
                ]);
                row.resize(header.len(), String::new());
            }
            Err(e) => return Err(e.into()),
        }
        rows.push(row);
    }
    let written = vec![
        run.write("sweep.csv", &to_csv(&header, &rows)?)?,
        run.finish()?,
    ];
    Ok(written)
}
