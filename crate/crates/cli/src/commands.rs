use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use lds_core::acq::{default_grid, is_acquiescent, no_blowup_ok, spectral_radius, AcqPolytope, BlowupStatus, Cone};
use lds_core::gen::{
    artificial_construction, coefficients_of, random_acquiescent, random_roots_poly, sample_trajectories,
    stream_rng, teacher_from_coefficients, GenSpec, Strategy,
};
use lds_core::learn::{
    improper_train, linreg_baseline, sgd_train, split_sequences, HistoryRecord, LinRegReport, Monitor,
    TrainOutcome,
};
use lds_core::lds::{fmt_f64, trajectory_from_csv, trajectory_to_csv, transfer_eval, SystemParams, Trajectory};
use lds_core::poly::{char_poly, unit_circle};
use lds_core::risk::{idealized_risk_freq, idealized_risk_time, population_risk_closed};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::config::{ExperimentConfig, Format, Mode};
use crate::CliError;

/// Pretty JSON with every float written to 17 significant digits.
struct Digits17<'a>(PrettyFormatter<'a>);

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(fmt_f64(v).as_bytes())
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("report types are serializable");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON is UTF-8")
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_file(path)?).map_err(|e| CliError::Io(format!("parsing {}: {e}", path.display())))
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("creating {}: {e}", out.display())))?;
    write_file(&out.join("config.effective.toml"), &cfg.to_toml())?;
    Ok(out)
}

fn say(line: std::fmt::Arguments) -> Result<(), CliError> {
    use io::Write;
    match writeln!(io::stdout().lock(), "{line}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(CliError::Io(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Flat `key,value` rows for `--format csv`.
fn key_value_csv(rows: &[(String, String)]) -> String {
    let mut s = String::from("key,value\n");
    for (k, v) in rows {
        s.push_str(k);
        s.push(',');
        s.push_str(v);
        s.push('\n');
    }
    s
}

fn write_report<T: Serialize>(
    out: &Path,
    stem: &str,
    format: Format,
    value: &T,
    rows: &[(String, String)],
) -> Result<(), CliError> {
    match format {
        Format::Json => write_file(&out.join(format!("{stem}.json")), &to_json(value)),
        Format::Csv => write_file(&out.join(format!("{stem}.csv")), &key_value_csv(rows)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcqSummary {
    pub member: bool,
    pub worst_slope: f64,
    pub worst_lower: f64,
    pub worst_upper: f64,
    pub worst_angle: f64,
    pub grid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: GenSpec,
    pub cone: Cone,
    pub teacher: String,
    pub trajectories: Vec<String>,
    pub attempts: usize,
    pub acceptance_rate: f64,
    pub acquiescence: AcqSummary,
}

fn acq_summary(a: &[f64], alpha: f64, cone: &Cone, grid: usize) -> Result<AcqSummary, CliError> {
    let r = is_acquiescent(a, alpha, cone, grid)?;
    Ok(AcqSummary {
        member: r.member,
        worst_slope: r.worst[0],
        worst_lower: r.worst[1],
        worst_upper: r.worst[2],
        worst_angle: r.worst_angle,
        grid: r.grid,
    })
}

pub fn gen(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let spec = cfg.gen.clone().ok_or_else(|| CliError::Usage("gen needs a [gen] section".into()))?;
    spec.validate()?;
    let cone = cfg.cone();
    let mut rng = stream_rng(spec.seed, 0);
    let (teacher, attempts) = match spec.strategy {
        Strategy::GaussianCoeff | Strategy::L1Ball => {
            let g = random_acquiescent(spec.n, spec.alpha, &cone, spec.strategy, spec.l_in, spec.l_out, &mut rng)?;
            (g.params, g.attempts)
        }
        Strategy::RandomRoots => {
            if spec.n % 2 != 0 {
                return Err(CliError::Usage("random_roots needs an even n".into()));
            }
            let rr = random_roots_poly(spec.n / 2, spec.alpha, &mut rng)?;
            (teacher_from_coefficients(coefficients_of(&rr.poly)?, spec.l_in, spec.l_out, &mut rng)?, 1)
        }
        Strategy::Artificial => {
            let (p, _) = artificial_construction(spec.n, spec.alpha)?;
            (teacher_from_coefficients(coefficients_of(&p)?, spec.l_in, spec.l_out, &mut rng)?, 1)
        }
    };
    let acquiescence = acq_summary(&teacher.a, spec.alpha, &cone, default_grid(spec.n))?;
    log::info!("teacher drawn after {attempts} attempts; member: {}", acquiescence.member);
    let trajs = sample_trajectories(&teacher, &spec)?;

    let out = prepare_out(cfg)?;
    write_file(&out.join("teacher.json"), &to_json(&teacher))?;
    let width = trajs.len().saturating_sub(1).to_string().len().max(5);
    let mut names = Vec::with_capacity(trajs.len());
    for (i, tr) in trajs.iter().enumerate() {
        let name = format!("traj_{i:0width$}.csv");
        write_file(&out.join(&name), &trajectory_to_csv(tr))?;
        names.push(name);
    }
    let manifest = Manifest {
        spec,
        cone,
        teacher: "teacher.json".into(),
        trajectories: names,
        attempts,
        acceptance_rate: 1.0 / attempts as f64,
        acquiescence,
    };
    write_file(&out.join("manifest.json"), &to_json(&manifest))?;
    say(format_args!("wrote {} trajectories to {}", manifest.trajectories.len(), out.display()))?;
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<(Manifest, SystemParams, Vec<Trajectory>), CliError> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let teacher = SystemParams::from_json(&read_file(&dir.join(&manifest.teacher))?)?;
    let trajs = manifest
        .trajectories
        .iter()
        .map(|name| Ok(trajectory_from_csv(&read_file(&dir.join(name))?)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    if trajs.is_empty() {
        return Err(CliError::Usage(format!("{} lists no trajectories", dir.display())));
    }
    Ok((manifest, teacher, trajs))
}

fn history_csv(history: &[HistoryRecord]) -> String {
    let mut s = String::from("iter,partial_loss,pop_risk_closed,grad_norm,projected\n");
    for h in history {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            h.iter,
            fmt_f64(h.partial_loss),
            opt(h.pop_risk_closed),
            fmt_f64(h.grad_norm),
            u8::from(h.projected)
        ));
    }
    s
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    mode: Mode,
    model_order: usize,
    steps: usize,
    selected: Option<usize>,
    final_partial_loss: Option<f64>,
    initial_excess_risk: Option<f64>,
    final_excess_risk: Option<f64>,
    linreg_residual: Option<f64>,
    noise_floor: f64,
}

impl TrainSummary {
    fn rows(&self) -> Vec<(String, String)> {
        vec![
            ("mode".into(), format!("{:?}", self.mode).to_lowercase()),
            ("model_order".into(), self.model_order.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("selected".into(), self.selected.map(|s| s.to_string()).unwrap_or_default()),
            ("final_partial_loss".into(), opt(self.final_partial_loss)),
            ("initial_excess_risk".into(), opt(self.initial_excess_risk)),
            ("final_excess_risk".into(), opt(self.final_excess_risk)),
            ("linreg_residual".into(), opt(self.linreg_residual)),
            ("noise_floor".into(), fmt_f64(self.noise_floor)),
        ]
    }
}

pub fn train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let t = cfg.train.clone().ok_or_else(|| CliError::Usage("train needs a [train] section".into()))?;
    let data = t.data.clone().ok_or_else(|| CliError::Usage("train needs --data or train.data".into()))?;
    let (manifest, teacher, trajs) = load_dataset(&data)?;
    let n = t.n.unwrap_or(teacher.n);
    let sigma = manifest.spec.sigma;
    let t_len = manifest.spec.t_len;
    let floor = sigma * sigma * teacher.l_out as f64;
    let monitor = Monitor { teacher: teacher.clone(), sigma, t_len };
    let out = prepare_out(cfg)?;

    if t.mode == Mode::Linreg {
        let rep: LinRegReport = linreg_baseline(&trajs, t.window.unwrap_or(n))?;
        write_file(&out.join("linreg.json"), &to_json(&rep))?;
        let summary = TrainSummary {
            mode: t.mode,
            model_order: rep.window,
            steps: 0,
            selected: None,
            final_partial_loss: None,
            initial_excess_risk: None,
            final_excess_risk: None,
            linreg_residual: Some(rep.residual),
            noise_floor: floor,
        };
        write_report(&out, "summary", cfg.format(), &summary, &summary.rows())?;
        say(format_args!("linreg window {}: residual {} (noise floor {})", rep.window, fmt_f64(rep.residual), fmt_f64(floor)))?;
        return Ok(());
    }

    let (outcome, order): (TrainOutcome, usize) = match t.mode {
        Mode::Proper => {
            let init = SystemParams::zeros(n, teacher.l_in, teacher.l_out)?;
            (sgd_train(&trajs, &t.sgd, &init, Some(&monitor))?, n)
        }
        Mode::Split => {
            let pieces = split_sequences(&trajs, t.sgd.split_beta, n)?;
            let init = SystemParams::zeros(n, teacher.l_in, teacher.l_out)?;
            (sgd_train(&pieces, &t.sgd, &init, Some(&monitor))?, n)
        }
        Mode::Improper => {
            let m = n + t.extension;
            (improper_train(&trajs, &t.sgd, m, Some(&monitor))?, m)
        }
        Mode::Linreg => unreachable!("handled above"),
    };

    write_file(&out.join("model.json"), &to_json(&outcome.params))?;
    write_file(&out.join("history.csv"), &history_csv(&outcome.history))?;
    if !outcome.checkpoints.is_empty() {
        let dir = out.join("checkpoints");
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
        for (step, params) in &outcome.checkpoints {
            write_file(&dir.join(format!("step_{step:07}.json")), &to_json(params))?;
        }
    }
    let init = SystemParams::zeros(order, teacher.l_in, teacher.l_out)?;
    let initial = population_risk_closed(&init, &teacher, t_len, sigma)? - floor;
    let final_excess = population_risk_closed(&outcome.params, &teacher, t_len, sigma)? - floor;
    let summary = TrainSummary {
        mode: t.mode,
        model_order: order,
        steps: outcome.history.len(),
        selected: Some(outcome.selected),
        final_partial_loss: outcome.history.last().map(|h| h.partial_loss),
        initial_excess_risk: Some(initial),
        final_excess_risk: Some(final_excess),
        linreg_residual: None,
        noise_floor: floor,
    };
    write_report(&out, "summary", cfg.format(), &summary, &summary.rows())?;
    say(format_args!("{} steps, excess risk {} -> {}", summary.steps, fmt_f64(initial), fmt_f64(final_excess)))
}

#[derive(Debug, Serialize)]
struct LongerRisk {
    t_len: usize,
    value: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TransferCurve {
    grid: usize,
    rms: f64,
    max: f64,
    /// `(θ, ‖Ĝ(e^{iθ}) − G(e^{iθ})‖_F)` including the feedthrough.
    curve: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    idealized_time: Option<f64>,
    idealized_tail_bound: Option<f64>,
    idealized_freq: Option<f64>,
    population: Option<f64>,
    population_longer: Vec<LongerRisk>,
    d_term: f64,
    transfer: Option<TransferCurve>,
    errors: Vec<String>,
}

fn keep<T>(r: lds_core::Result<T>, what: &str, errors: &mut Vec<String>) -> Option<T> {
    r.map_err(|e| errors.push(format!("{what}: {e}"))).ok()
}

fn transfer_gap(model: &SystemParams, teacher: &SystemParams, z: Complex64) -> lds_core::Result<f64> {
    let gm = transfer_eval(model, z)?;
    let gt = transfer_eval(teacher, z)?;
    let mut s = 0.0;
    for (k, (a, b)) in gm.iter().zip(&gt).enumerate() {
        s += (a + model.d[k] - b - teacher.d[k]).norm_sqr();
    }
    Ok(s.sqrt())
}

fn transfer_curve(model: &SystemParams, teacher: &SystemParams, grid: usize, points: usize) -> lds_core::Result<TransferCurve> {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for z in unit_circle(grid) {
        let g = transfer_gap(model, teacher, z)?;
        sum += g * g;
        max = max.max(g);
    }
    let curve = (0..points)
        .map(|k| {
            let theta = 2.0 * PI * k as f64 / points as f64;
            Ok((theta, transfer_gap(model, teacher, Complex64::from_polar(1.0, theta))?))
        })
        .collect::<lds_core::Result<_>>()?;
    Ok(TransferCurve { grid, rms: (sum / grid as f64).sqrt(), max, curve })
}

pub fn eval(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let e = cfg.eval.clone().ok_or_else(|| CliError::Usage("eval needs an [eval] section".into()))?;
    let model_path = e.model.clone().ok_or_else(|| CliError::Usage("eval needs --model".into()))?;
    let teacher_path = e.teacher.clone().ok_or_else(|| CliError::Usage("eval needs --teacher".into()))?;
    if e.t_len == 0 || e.grid < 512 || e.curve_points == 0 {
        return Err(CliError::Usage("eval needs t_len ≥ 1, grid ≥ 512 and curve_points ≥ 1".into()));
    }
    let model = SystemParams::from_json(&read_file(&model_path)?)?;
    let teacher = SystemParams::from_json(&read_file(&teacher_path)?)?;
    if model.l_in != teacher.l_in || model.l_out != teacher.l_out {
        return Err(CliError::Usage("model and teacher widths differ".into()));
    }
    let mut errors = Vec::new();
    let time = keep(idealized_risk_time(&model, &teacher, 0), "idealized_time", &mut errors);
    let idealized_freq = keep(idealized_risk_freq(&model, &teacher, e.grid), "idealized_freq", &mut errors);
    let population = keep(population_risk_closed(&model, &teacher, e.t_len, e.sigma), "population", &mut errors);
    let lengths = if e.t_prime.is_empty() { vec![2 * e.t_len, 4 * e.t_len] } else { e.t_prime.clone() };
    let population_longer = lengths
        .iter()
        .map(|&t| LongerRisk {
            t_len: t,
            value: keep(population_risk_closed(&model, &teacher, t, e.sigma), &format!("population_{t}"), &mut errors),
        })
        .collect();
    let transfer = keep(transfer_curve(&model, &teacher, e.grid, e.curve_points), "transfer", &mut errors);
    let d_term = model.d.iter().zip(&teacher.d).map(|(a, b)| (a - b).powi(2)).sum();
    let report = EvalReport {
        idealized_time: time.map(|t| t.value),
        idealized_tail_bound: time.map(|t| t.tail_bound),
        idealized_freq,
        population,
        population_longer,
        d_term,
        transfer,
        errors,
    };

    let mut rows: Vec<(String, String)> = vec![
        ("idealized_time".into(), opt(report.idealized_time)),
        ("idealized_tail_bound".into(), opt(report.idealized_tail_bound)),
        ("idealized_freq".into(), opt(report.idealized_freq)),
        (format!("population_{}", e.t_len), opt(report.population)),
    ];
    rows.extend(report.population_longer.iter().map(|l| (format!("population_{}", l.t_len), opt(l.value))));
    rows.push(("d_term".into(), fmt_f64(report.d_term)));
    rows.push(("transfer_rms".into(), opt(report.transfer.as_ref().map(|t| t.rms))));
    rows.push(("transfer_max".into(), opt(report.transfer.as_ref().map(|t| t.max))));

    let out = prepare_out(cfg)?;
    write_report(&out, "eval", cfg.format(), &report, &rows)?;
    if cfg.format() == Format::Csv {
        if let Some(t) = &report.transfer {
            let mut s = String::from("theta,abs_error\n");
            for (theta, g) in &t.curve {
                s.push_str(&format!("{},{}\n", fmt_f64(*theta), fmt_f64(*g)));
            }
            write_file(&out.join("transfer_curve.csv"), &s)?;
        }
    }
    for (k, v) in &rows {
        say(format_args!("{k:<24}{v:>26}"))?;
    }
    for err in &report.errors {
        log::warn!("{err}");
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CoefficientFile {
    a: Vec<f64>,
}

/// Coefficients `a` from a model JSON, `{"a": [...]}` or a bare array.
pub fn read_coefficients(text: &str) -> Result<Vec<f64>, CliError> {
    if let Ok(p) = SystemParams::from_json(text) {
        return Ok(p.a);
    }
    if let Ok(a) = serde_json::from_str::<Vec<f64>>(text) {
        return Ok(a);
    }
    serde_json::from_str::<CoefficientFile>(text)
        .map(|f| f.a)
        .map_err(|e| CliError::Io(format!("input is neither a model nor a coefficient list: {e}")))
}

#[derive(Debug, Serialize)]
struct BlowupSummary {
    status: String,
    scaled_sum: f64,
    scaled_bound: f64,
    plain_sum: f64,
}

#[derive(Debug, Serialize)]
struct CheckReport {
    n: usize,
    alpha: f64,
    cone: Cone,
    acquiescence: AcqSummary,
    /// Largest value of `g·a − h` per constraint family (feasible when ≤ 0).
    polytope_worst: [f64; 4],
    polytope_member: bool,
    spectral_radius: Option<f64>,
    no_blowup: BlowupSummary,
    suggested_extension_degree: Option<usize>,
    errors: Vec<String>,
}

pub fn check(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let c = cfg.check.clone().unwrap_or_default();
    let input = c.input.clone().ok_or_else(|| CliError::Usage("check needs --input".into()))?;
    let a = read_coefficients(&read_file(&input)?)?;
    if a.is_empty() {
        return Err(CliError::Usage("empty coefficient list".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage("coefficients must be finite".into()));
    }
    let n = a.len();
    let cone = cfg.cone();
    let grid = c.grid.unwrap_or_else(|| default_grid(n));
    let acquiescence = acq_summary(&a, c.alpha, &cone, grid)?;
    let poly = AcqPolytope::build(n, c.alpha, &cone, grid)?;
    let mut polytope_worst = [f64::NEG_INFINITY; 4];
    for (i, v) in poly.constraint_values(&a).into_iter().enumerate() {
        polytope_worst[i % 4] = polytope_worst[i % 4].max(v);
    }
    let mut errors = Vec::new();
    let rho = keep(spectral_radius(&a), "spectral_radius", &mut errors);
    let b = no_blowup_ok(&a, c.alpha, &cone, c.k_max)?;
    let status = match b.status {
        BlowupStatus::Holds => "holds".to_string(),
        BlowupStatus::PreconditionFailed => "not_a_member".to_string(),
        BlowupStatus::Violated { k } => format!("violated_at_{k}"),
    };
    let suggested = keep(
        char_poly(&a).and_then(|p| p.suggested_extension_degree()),
        "suggested_extension_degree",
        &mut errors,
    );
    let report = CheckReport {
        n,
        alpha: c.alpha,
        cone,
        polytope_member: polytope_worst.iter().all(|v| *v <= 0.0),
        acquiescence,
        polytope_worst,
        spectral_radius: rho,
        no_blowup: BlowupSummary { status, scaled_sum: b.scaled_sum, scaled_bound: b.scaled_bound, plain_sum: b.plain_sum },
        suggested_extension_degree: suggested,
        errors,
    };
    let acq = &report.acquiescence;
    let rows: Vec<(String, String)> = vec![
        ("n".into(), n.to_string()),
        ("alpha".into(), fmt_f64(c.alpha)),
        ("member".into(), acq.member.to_string()),
        ("worst_slope".into(), fmt_f64(acq.worst_slope)),
        ("worst_lower".into(), fmt_f64(acq.worst_lower)),
        ("worst_upper".into(), fmt_f64(acq.worst_upper)),
        ("worst_angle".into(), fmt_f64(acq.worst_angle)),
        ("polytope_member".into(), report.polytope_member.to_string()),
        ("spectral_radius".into(), opt(report.spectral_radius)),
        ("no_blowup".into(), report.no_blowup.status.clone()),
        (
            "suggested_extension_degree".into(),
            report.suggested_extension_degree.map(|d| d.to_string()).unwrap_or_default(),
        ),
    ];
    let out = prepare_out(cfg)?;
    write_report(&out, "check", cfg.format(), &report, &rows)?;
    for (k, v) in &rows {
        say(format_args!("{k:<28}{v:>26}"))?;
    }
    Ok(())
}
