//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed as it is
//! decided. The process exits non-zero if any gating criterion fails. The
//! real-data anchor is informational and only runs when
//! `MSTEM_ANCHOR_SERIES` names a prepared fast-charging series cache.

// Negated comparisons make NaN count as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use chrono::{Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mstem::autodiff::{Matrix, Mode, NormStats, Param, Parameterized, Tape, Var};
use mstem::data::{
    generate_events, prepare_dataset, read_series, resample_hourly, station_ids, ChargingEvent,
    LoadSeries, PreparedData, Scaler, SplitFractions, SynthConfig,
};
use mstem::evaluation::{evaluate, EvalOptions};
use mstem::gradcheck::{check_model, GradReport};
use mstem::mgcl::build_graph;
use mstem::tenn::{lstm_cell_step, LstmParams, LstmState};
use mstem::{
    compute_metrics, run_comparison, train, CompareSpec, Forecaster, LearnedModel, ModelSpec,
    ModelTag, Mstem, MstemConfig, Network, TrainConfig,
};

enum Verdict {
    Pass(String),
    Fail(String),
    /// Not gating: skipped or informational.
    Note(&'static str, String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------- gradients

const GRAD_TOL: f64 = 1e-4;

/// Free-standing tensors for exercising tape primitives.
struct Bag(Vec<Param>);

impl Parameterized for Bag {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.0.iter_mut().for_each(f);
    }
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn bag(seed: u64, shapes: &[(usize, usize)]) -> Bag {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Bag(shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| Param::new(format!("t{i}"), random(&mut rng, r, c, -1.0, 1.0)))
        .collect())
}

/// Σ wᵢⱼ·xᵢⱼ with fixed pseudo-random weights, so every entry gets a
/// distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> mstem::Result<Var> {
    let (r, c) = (tape.value(x).rows(), tape.value(x).cols());
    let w = tape.constant(random(&mut ChaCha8Rng::seed_from_u64(seed), r, c, -2.0, 2.0));
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

type Probe = Box<dyn Fn(&mut Bag, &mut Tape) -> mstem::Result<Var>>;

fn probe(f: impl Fn(&mut Bag, &mut Tape) -> mstem::Result<Var> + 'static) -> Probe {
    Box::new(f)
}

fn primitive_probes() -> Vec<(&'static str, Bag, u64, Probe)> {
    let op = Arc::new(random(&mut ChaCha8Rng::seed_from_u64(90), 3, 3, -1.0, 1.0));
    let gather_index: Arc<[usize]> = vec![0, 0, 11, 5, 3, 7, 2, 2].into();
    let huber_target = random(&mut ChaCha8Rng::seed_from_u64(91), 4, 3, -3.0, 3.0);
    let mut relu_bag = bag(12, &[(4, 3)]);
    // Keep inputs away from the kink where the derivative is undefined.
    relu_bag.0[0].value_mut().data_mut().iter_mut().for_each(|v| *v += 0.2 * v.signum());
    vec![
        ("matmul", bag(1, &[(3, 4), (4, 2)]), 0, probe(|m, t| {
            let (a, b) = (t.param(&mut m.0[0]), t.param(&mut m.0[1]));
            let y = t.matmul(a, b)?;
            weighted_sum(t, y, 1)
        })),
        ("add", bag(2, &[(3, 2), (3, 2)]), 0, probe(|m, t| {
            let (a, b) = (t.param(&mut m.0[0]), t.param(&mut m.0[1]));
            let y = t.add(a, b)?;
            weighted_sum(t, y, 2)
        })),
        ("sub", bag(3, &[(3, 2), (3, 2)]), 0, probe(|m, t| {
            let (a, b) = (t.param(&mut m.0[0]), t.param(&mut m.0[1]));
            let y = t.sub(a, b)?;
            weighted_sum(t, y, 3)
        })),
        ("mul", bag(4, &[(3, 2), (3, 2)]), 0, probe(|m, t| {
            let (a, b) = (t.param(&mut m.0[0]), t.param(&mut m.0[1]));
            let y = t.mul(a, b)?;
            weighted_sum(t, y, 4)
        })),
        ("add_row_bias", bag(5, &[(4, 3), (1, 3)]), 0, probe(|m, t| {
            let (a, b) = (t.param(&mut m.0[0]), t.param(&mut m.0[1]));
            let y = t.add_row_bias(a, b)?;
            weighted_sum(t, y, 5)
        })),
        ("scale", bag(6, &[(2, 3)]), 0, probe(|m, t| {
            let a = t.param(&mut m.0[0]);
            let y = t.scale(a, -1.7);
            weighted_sum(t, y, 6)
        })),
        ("sigmoid", bag(7, &[(3, 3)]), 0, probe(|m, t| {
            let a = t.param(&mut m.0[0]);
            let y = t.sigmoid(a);
            weighted_sum(t, y, 7)
        })),
        ("tanh", bag(8, &[(3, 3)]), 0, probe(|m, t| {
            let a = t.param(&mut m.0[0]);
            let y = t.tanh(a);
            weighted_sum(t, y, 8)
        })),
        ("relu", relu_bag, 0, probe(|m, t| {
            let a = t.param(&mut m.0[0]);
            let y = t.relu(a);
            weighted_sum(t, y, 12)
        })),
        ("concat_cols", bag(9, &[(3, 2), (3, 4)]), 0, probe(|m, t| {
            let (a, b) = (t.param(&mut m.0[0]), t.param(&mut m.0[1]));
            let y = t.concat_cols(a, b)?;
            weighted_sum(t, y, 9)
        })),
        ("transpose", bag(10, &[(2, 5)]), 0, probe(|m, t| {
            let a = t.param(&mut m.0[0]);
            let y = t.transpose(a)?;
            weighted_sum(t, y, 10)
        })),
        ("gather", bag(11, &[(6, 2)]), 0, probe(move |m, t| {
            let a = t.param(&mut m.0[0]);
            let y = t.gather(a, gather_index.clone(), 2, 4)?;
            weighted_sum(t, y, 11)
        })),
        ("block_propagate", bag(13, &[(6, 2)]), 0, probe(move |m, t| {
            let a = t.param(&mut m.0[0]);
            let y = t.block_propagate(op.clone(), a)?;
            weighted_sum(t, y, 13)
        })),
        ("batch_norm (batch statistics)", bag(14, &[(5, 3), (1, 3), (1, 3)]), 0, probe(|m, t| {
            let (x, g, b) = (t.param(&mut m.0[0]), t.param(&mut m.0[1]), t.param(&mut m.0[2]));
            let (y, _) = t.batch_norm(x, g, b, NormStats::Batch)?;
            weighted_sum(t, y, 14)
        })),
        ("batch_norm (running statistics)", bag(15, &[(5, 3), (1, 3), (1, 3)]), 0, probe(|m, t| {
            let (x, g, b) = (t.param(&mut m.0[0]), t.param(&mut m.0[1]), t.param(&mut m.0[2]));
            let stats = NormStats::Running {
                mean: &[0.1, -0.3, 0.2],
                var: &[0.5, 2.0, 1.1],
            };
            let (y, _) = t.batch_norm(x, g, b, stats)?;
            weighted_sum(t, y, 15)
        })),
        ("dropout", bag(16, &[(6, 4)]), 99, probe(|m, t| {
            let a = t.param(&mut m.0[0]);
            let y = t.dropout(a, 0.3, Mode::Train)?;
            weighted_sum(t, y, 16)
        })),
        ("sum", bag(17, &[(3, 4)]), 0, probe(|m, t| {
            let a = t.param(&mut m.0[0]);
            let s = t.sum(a);
            let sq = t.mul(s, s)?;
            Ok(t.scale(sq, 0.5))
        })),
        ("huber_loss", bag(18, &[(4, 3)]), 0, probe(move |m, t| {
            let a = t.param(&mut m.0[0]);
            let y = t.scale(a, 2.0);
            t.huber_loss(y, &huber_target, 1.0)
        })),
    ]
}

fn worst(reports: &[GradReport]) -> (String, f64) {
    reports
        .iter()
        .map(|r| (r.name.clone(), r.rel_error))
        .fold((String::new(), 0.0), |a, b| if b.1 > a.1 || b.1.is_nan() { b } else { a })
}

fn gradient_suite() -> Verdict {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut checked = 0;
    for (name, mut b, seed, loss) in primitive_probes() {
        let reports = check_model(&mut b, seed, |m, t| loss(m, t)).unwrap();
        let (tensor, err) = worst(&reports);
        checked += 1;
        if !(err < GRAD_TOL) || reports.iter().all(|r| r.analytic_norm == 0.0) {
            failures.push(format!("{name}/{tensor} rel err {err:.2e}"));
        }
    }

    let config = MstemConfig {
        lookback: 8,
        horizon: 2,
        scales: vec![1, 2],
        seed: 17,
        ..Default::default()
    };
    let mut model = Mstem::new(config, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let windows: Vec<Matrix> = (0..4).map(|_| random(&mut rng, 8, 3, -1.5, 1.5)).collect();
    let target = random(&mut rng, 4, 6, -1.0, 1.0);
    let reports = check_model(&mut model, 5, |m, t| {
        let refs: Vec<&Matrix> = windows.iter().collect();
        let y = m.forward(t, &refs, Mode::Train)?;
        t.huber_loss(y, &target, 1.0)
    })
    .unwrap();
    let (tensor, err) = worst(&reports);
    if !(err < GRAD_TOL) {
        failures.push(format!("mstem/{tensor} rel err {err:.2e}"));
    }

    let secs = started.elapsed().as_secs_f64();
    if secs >= 60.0 {
        failures.push(format!("took {secs:.1} s"));
    }
    if failures.is_empty() {
        Verdict::Pass(format!(
            "{checked} primitives + full model ({} tensors, worst {tensor} {err:.1e}) in {secs:.1} s",
            reports.len()
        ))
    } else {
        Verdict::Fail(failures.join("; "))
    }
}

// ------------------------------------------------------------- closed form

fn graph_closed_form() -> Verdict {
    for n in [1usize, 2, 3, 10] {
        let g = build_graph(n).unwrap();
        let a = g.norm_adj();
        let expect = 1.0 / n as f64;
        if a.rows() != n || a.cols() != n || a.data().iter().any(|&v| v != expect) {
            return Verdict::Fail(format!("N={n}: entries differ from 1/N"));
        }
        for r in 0..n {
            let s: f64 = a.row(r).iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Verdict::Fail(format!("N={n}: row {r} sums to {s}"));
            }
        }
    }
    Verdict::Pass("all-(1/N) for N in {1, 2, 3, 10}".into())
}

// ----------------------------------------------------------------- oracles

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate pre-activation from the weight layout `[h; x] × d_h`.
fn gate(w: &Matrix, b: &Matrix, h: &[f64], x: &[f64], j: usize) -> f64 {
    let mut acc = b.get(0, j);
    for (i, hv) in h.iter().enumerate() {
        acc += hv * w.get(i, j);
    }
    for (i, xv) in x.iter().enumerate() {
        acc += xv * w.get(h.len() + i, j);
    }
    acc
}

fn reference_lstm_step(x: &[f64], s: &LstmState, p: &LstmParams) -> LstmState {
    let d = s.h.len();
    let pre = |k: usize, j: usize| gate(p.weights[k].value(), p.biases[k].value(), &s.h, x, j);
    let mut out = LstmState::zeros(d);
    for j in 0..d {
        let f = sigmoid(pre(0, j));
        let i = sigmoid(pre(1, j));
        let g = pre(2, j).tanh();
        let o = sigmoid(pre(3, j));
        out.c[j] = f * s.c[j] + i * g;
        out.h[j] = o * out.c[j].tanh();
    }
    out
}

fn naive_metrics(pred: &[Matrix], actual: &[Matrix]) -> (f64, f64, f64) {
    let (mut se, mut ae, mut count) = (0.0, 0.0, 0usize);
    for (p, a) in pred.iter().zip(actual) {
        for r in 0..p.rows() {
            for c in 0..p.cols() {
                let e = p.get(r, c) - a.get(r, c);
                se += e * e;
                ae += e.abs();
                count += 1;
            }
        }
    }
    let mse = se / count as f64;
    (mse, ae / count as f64, mse.sqrt())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn ramp_series() -> LoadSeries {
    let values = Matrix::from_vec(100, 2, (0..100).flat_map(|t| [t as f64, 5.0]).collect()).unwrap();
    LoadSeries::new(
        vec!["ramp".into(), "flat".into()],
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        values,
    )
    .unwrap()
}

fn rule_score(data: &PreparedData, tag: ModelTag) -> mstem::MetricTriple {
    let config = MstemConfig {
        lookback: 4,
        horizon: 2,
        ..Default::default()
    };
    let mut f = Forecaster::rule(ModelSpec::new(tag, 2, config)).unwrap();
    evaluate(&mut f, data, EvalOptions::default()).unwrap()
}

fn oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst_lstm: f64 = 0.0;
    for _ in 0..200 {
        let (inputs, hidden) = (rng.random_range(1..6), rng.random_range(1..9));
        let mut p = LstmParams::new("ref", inputs, hidden, &mut rng);
        for b in p.biases.iter_mut() {
            *b.value_mut() = random(&mut rng, 1, hidden, -1.0, 1.0);
        }
        let x: Vec<f64> = (0..inputs).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s = LstmState {
            h: (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect(),
            c: (0..hidden).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let want = reference_lstm_step(&x, &s, &p);
        let got = lstm_cell_step(&x, &s, &mut p).unwrap();
        for (a, b) in got.h.iter().chain(&got.c).zip(want.h.iter().chain(&want.c)) {
            worst_lstm = worst_lstm.max((a - b).abs());
        }
    }
    if !(worst_lstm <= 1e-12) {
        return Verdict::Fail(format!("lstm step deviates by {worst_lstm:.2e}"));
    }

    for trial in 0..100 {
        let (k, rows, cols) = (rng.random_range(1..6), rng.random_range(1..5), rng.random_range(1..4));
        let pred: Vec<Matrix> = (0..k).map(|_| random(&mut rng, rows, cols, -10.0, 10.0)).collect();
        let actual: Vec<Matrix> = (0..k).map(|_| random(&mut rng, rows, cols, -10.0, 10.0)).collect();
        let m = compute_metrics(&pred, &actual).unwrap();
        let (mse, mae, rmse) = naive_metrics(&pred, &actual);
        if !(close(m.mse, mse, 1e-12) && close(m.mae, mae, 1e-12) && close(m.rmse, rmse, 1e-12)) {
            return Verdict::Fail(format!("metrics trial {trial}: {m:?} vs ({mse}, {mae}, {rmse})"));
        }
    }

    // Test segment rows 80..100 give 15 windows. HI repeats t+2, t+3 for
    // targets t+4, t+5; MA predicts t+1.5. The flat station is exact.
    let data = prepare_dataset(&ramp_series(), 4, 2, SplitFractions::default()).unwrap();
    let hi = rule_score(&data, ModelTag::Hi);
    let ma = rule_score(&data, ModelTag::Ma);
    let hand_hi = (2.0, 1.0, 2f64.sqrt());
    let hand_ma = ((6.25 + 12.25) / 4.0, (2.5 + 3.5) / 4.0, 4.625f64.sqrt());
    if data.test.len() != 15 || (hi.mse, hi.mae, hi.rmse) != hand_hi || (ma.mse, ma.mae, ma.rmse) != hand_ma {
        return Verdict::Fail(format!("fixture: HI {hi:?}, MA {ma:?}"));
    }
    Verdict::Pass(format!(
        "lstm step max dev {worst_lstm:.1e}; metrics match loop; HI {}/{}, MA {}/{} exact",
        hi.mse, hi.mae, ma.mse, ma.mae
    ))
}

// ------------------------------------------------------- zero network

fn zero_network() -> Verdict {
    let config = MstemConfig {
        lookback: 12,
        horizon: 4,
        scales: vec![1, 3],
        ..Default::default()
    };
    let mut model = Mstem::new(config, 3).unwrap();
    model.visit_params(&mut |p| p.value_mut().fill(0.0));
    let x = random(&mut ChaCha8Rng::seed_from_u64(41), 12, 3, -5.0, 5.0);
    let y = model.forward_window(&x, Mode::Eval).unwrap();
    let want = x.slice_rows(8, 12);
    verdict(
        y.data() == want.data(),
        format!("forecast equals the last 4 input rows (max diff {:.1e})", y.max_abs_diff(&want)),
    )
}

// -------------------------------------------------------- resampling

fn energy_conservation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let origin = Utc.with_ymd_and_hms(2023, 3, 1, 0, 0, 0).unwrap();
    let events: Vec<ChargingEvent> = (0..1000)
        .map(|i| {
            let start = origin + Duration::seconds(rng.random_range(0..30 * 86_400));
            let secs = if i % 10 == 0 { 0 } else { rng.random_range(1..10 * 3600) };
            let station = format!("S{}", rng.random_range(0..5));
            let kw = if rng.random_bool(0.5) { 22.0 } else { 7.0 };
            ChargingEvent::new(station, kw, start, start + Duration::seconds(secs), rng.random_range(0.0..60.0))
                .unwrap()
        })
        .collect();
    let series = resample_hourly(&events, &station_ids(&events)).unwrap();
    let total: f64 = events.iter().map(|e| e.energy_kwh).sum();
    let rel = (series.total_energy_kwh() - total).abs() / total;
    verdict(rel <= 1e-6, format!("1000 events, {total:.3} kWh, rel err {rel:.1e}"))
}

// ------------------------------------------------------ learning

fn synthetic_series() -> LoadSeries {
    let events = generate_events(&SynthConfig::default()).unwrap();
    resample_hourly(&events, &station_ids(&events)).unwrap()
}

fn desk_scale(series: &LoadSeries) -> Verdict {
    let config = MstemConfig::default();
    let data = prepare_dataset(series, config.lookback, config.horizon, SplitFractions::default()).unwrap();
    let spec = ModelSpec::new(ModelTag::Mstem, series.n_stations(), config.clone());
    let started = Instant::now();
    let (model, log) = train(LearnedModel::build(&spec).unwrap(), &data.train, &data.val, &TrainConfig::default()).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let mut mstem = Forecaster::trained(spec, model);
    let m = evaluate(&mut mstem, &data, EvalOptions::default()).unwrap();
    let mut hi = Forecaster::rule(ModelSpec::new(ModelTag::Hi, series.n_stations(), config)).unwrap();
    let h = evaluate(&mut hi, &data, EvalOptions::default()).unwrap();
    verdict(
        m.mse < h.mse && secs < 300.0,
        format!(
            "test MSE {:.3} vs HI {:.3} at horizon 6; {} epochs in {secs:.1} s",
            m.mse,
            h.mse,
            log.epochs.len()
        ),
    )
}

fn determinism(series: &LoadSeries) -> Verdict {
    let spec = CompareSpec {
        models: ModelTag::ALL.to_vec(),
        horizons: vec![6, 12, 24],
        model: MstemConfig::default(),
        ma_window: None,
        train: TrainConfig::default(),
        fractions: SplitFractions::default(),
        options: EvalOptions::default(),
    };
    let run = |workers| {
        let report = run_comparison(series, &spec, "synthetic", "fixed", workers).unwrap();
        let mut bytes = Vec::new();
        report.write_csv(&mut bytes).unwrap();
        (bytes, report.rows.iter().filter(|r| r.outcome.is_ok()).count())
    };
    let started = Instant::now();
    let (a, ok_rows) = run(1);
    let (b, _) = run(4);
    verdict(
        a == b && ok_rows == 21,
        format!(
            "{ok_rows}/21 rows, {} bytes identical across 1 and 4 workers ({:.0} s)",
            a.len(),
            started.elapsed().as_secs_f64()
        ),
    )
}

// --------------------------------------------------------- clamp

fn clamp_trials() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut emitted = 0usize;
    for trial in 0..1000 {
        let tag = ModelTag::ALL[rng.random_range(0..ModelTag::ALL.len())];
        let lookback = rng.random_range(4..11);
        let stations = rng.random_range(1..5);
        let config = MstemConfig {
            lookback,
            horizon: rng.random_range(1..4),
            scales: vec![1, rng.random_range(2..=lookback)],
            hidden: 4,
            graph_out: 2,
            lstm_hidden: 4,
            threshold: rng.random_range(0.0..5.0),
            seed: rng.random(),
            ..Default::default()
        };
        let mut spec = ModelSpec::new(tag, stations, config);
        spec.baseline_hidden = 4;
        spec.dlinear_kernel = 5;
        spec.ma_window = Some(rng.random_range(1..=lookback));
        let mut forecaster = if tag.is_learned() {
            let mut model = LearnedModel::build(&spec).unwrap();
            let gain = rng.random_range(0.1..3.0);
            model.visit_params(&mut |p| {
                let (r, c) = (p.value().rows(), p.value().cols());
                p.set_value(random(&mut rng, r, c, -gain, gain));
            });
            Forecaster::trained(spec, model)
        } else {
            Forecaster::rule(spec).unwrap()
        };
        let scaler = Scaler::from_parts(
            (0..stations).map(|_| rng.random_range(-5.0..5.0)).collect(),
            (0..stations).map(|_| rng.random_range(0.1..10.0)).collect(),
        )
        .unwrap();
        let windows: Vec<Matrix> = (0..3).map(|_| random(&mut rng, lookback, stations, -50.0, 50.0)).collect();
        let refs: Vec<&Matrix> = windows.iter().collect();
        for out in forecaster.forecast(&refs, &scaler).unwrap() {
            if let Some(v) = out.data().iter().find(|v| !(**v >= 0.0)) {
                return Verdict::Fail(format!("trial {trial} ({tag}) emitted {v}"));
            }
            emitted += out.len();
        }
    }
    Verdict::Pass(format!("1000 randomized trials, {emitted} values, all ≥ 0"))
}

// ----------------------------------------------------- real-data anchor

/// Reference real-data metrics at horizon 24: MSE, MAE, RMSE. Agreement
/// within 30% counts as corroboration.
const ANCHOR: (f64, f64, f64) = (22.61, 2.15, 4.75);

fn soft_anchor() -> Verdict {
    let Some(path) = std::env::var_os("MSTEM_ANCHOR_SERIES") else {
        return Verdict::Note("SKIP", "set MSTEM_ANCHOR_SERIES to a prepared fast-charging cache".into());
    };
    let series = read_series(std::fs::File::open(&path).unwrap()).unwrap();
    let config = MstemConfig {
        horizon: 24,
        ..Default::default()
    };
    let data = prepare_dataset(&series, config.lookback, config.horizon, SplitFractions::default()).unwrap();
    let spec = ModelSpec::new(ModelTag::Mstem, series.n_stations(), config);
    let (model, _) = train(LearnedModel::build(&spec).unwrap(), &data.train, &data.val, &TrainConfig::default()).unwrap();
    let m = evaluate(&mut Forecaster::trained(spec, model), &data, EvalOptions::default()).unwrap();
    let within = |got: f64, want: f64| (got - want).abs() <= 0.3 * want;
    let ok = within(m.mse, ANCHOR.0) && within(m.mae, ANCHOR.1) && within(m.rmse, ANCHOR.2);
    let detail = format!(
        "horizon 24: MSE {:.2} / MAE {:.2} / RMSE {:.2} vs {:.2} / {:.2} / {:.2}",
        m.mse, m.mae, m.rmse, ANCHOR.0, ANCHOR.1, ANCHOR.2
    );
    Verdict::Note(if ok { "PASS" } else { "DEVIATES" }, detail)
}

// ----------------------------------------------------------- driver

fn run(name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let started = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f))
        .unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
    let secs = started.elapsed().as_secs_f64();
    let (label, detail, ok) = match v {
        Verdict::Pass(d) => ("PASS", d, true),
        Verdict::Fail(d) => ("FAIL", d, false),
        Verdict::Note(l, d) => (l, d, true),
    };
    println!("{label:<8} {name:<28} {detail} [{secs:.1} s]");
    ok
}

fn main() {
    // Only the criterion lines are wanted on stdout.
    std::panic::set_hook(Box::new(|_| {}));
    let series = synthetic_series();
    let results = [
        run("gradient-suite", gradient_suite),
        run("graph-closed-form", graph_closed_form),
        run("reference-oracles", oracles),
        run("zero-network-reduction", zero_network),
        run("energy-conservation", energy_conservation),
        run("desk-scale-learning", || desk_scale(&series)),
        run("compare-determinism", || determinism(&series)),
        run("nonnegative-forecasts", clamp_trials),
        run("real-data-anchor", soft_anchor),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
