use serde::{Deserialize, Serialize};

use super::context::{train_model, Context};
use crate::attribution::{
    calibrate_with, model_blind_baseline, raw_vectors, threshold_decide, train_linear, LinearClassifier, OriginLabel,
    Task, ThresholdAttack,
};
use crate::config::ExperimentConfig;
use crate::data::{generated, split, Sample};
use crate::error::{contract, Error, Result};
use crate::features::{FeatureSpec, GsaConfig, GsaGroups, GsaMode, TimestepPlan, TrajectoryFeatureVector};
use crate::metrics::{
    argmax, asr, binary_report, class_balanced_accuracy, one_vs_rest_report, roc_auc, softmax,
    AttackReport, BalancedAccuracyReport, OvrReport, RocCurve,
};
use crate::net::ArchConfig;
use crate::rng;
use crate::sampler::{sample_dataset, SamplerKind};

/// Splits taking part in a task with their class indices; `suffix` is
/// `"train"` or `"eval"`.
pub fn task_splits(task: Task, suffix: &str) -> Vec<(String, usize)> {
    OriginLabel::ALL
        .iter()
        .filter_map(|&l| task.class_of(l).map(|c| (format!("{}_{suffix}", l.name()), c)))
        .collect()
}

type Labeled = (Vec<TrajectoryFeatureVector>, Vec<usize>);

/// Concatenates per-class feature sets into vectors and class indices.
fn stack(parts: Vec<(Vec<TrajectoryFeatureVector>, usize)>) -> Labeled {
    let mut f = Vec::new();
    let mut y = Vec::new();
    for (v, c) in parts {
        y.extend(std::iter::repeat(c).take(v.len()));
        f.extend(v);
    }
    (f, y)
}

fn logits_all(clf: &LinearClassifier, f: &[TrajectoryFeatureVector]) -> Result<Vec<Vec<f64>>> {
    f.iter().map(|v| clf.predict_logits(v)).collect()
}

/// Binary report of a two-class classifier: class 1 is positive, scored by its
/// softmax probability, decided by argmax.
fn binary_eval(task: &str, method: &str, clf: &LinearClassifier, eval: &Labeled) -> Result<AttackReport> {
    let logits = logits_all(clf, &eval.0)?;
    let scores: Vec<f64> = logits.iter().map(|l| softmax(l)[1]).collect();
    let preds: Vec<bool> = logits.iter().map(|l| argmax(l) == 1).collect();
    let labels: Vec<bool> = eval.1.iter().map(|&c| c == 1).collect();
    binary_report(task, method, &scores, &labels, &preds)
}

fn fit_binary(ctx: &Context, task: Task, method: &str, train: &Labeled, eval: &Labeled) -> Result<(LinearClassifier, AttackReport)> {
    let (clf, _) = train_linear(&train.0, &train.1, 2, task.name(), &ctx.cfg.clf)?;
    let report = binary_eval(task.name(), method, &clf, eval)?;
    Ok((clf, report))
}

fn mia_sets(ctx: &Context, plan: &TimestepPlan, spec: &FeatureSpec) -> Result<(Labeled, Labeled)> {
    let f = |n: &str| ctx.features(n, plan, spec);
    Ok((
        stack(vec![(f("member_train")?, 1), (f("external_train")?, 0)]),
        stack(vec![(f("member_eval")?, 1), (f("external_eval")?, 0)]),
    ))
}

/// Member-vs-external AUC of the linear classifier on one feature spec.
pub fn mia_classifier_report(ctx: &Context, method: &str, plan: &TimestepPlan, spec: &FeatureSpec) -> Result<AttackReport> {
    let (train, eval) = mia_sets(ctx, plan, spec)?;
    Ok(fit_binary(ctx, Task::Mia, method, &train, &eval)?.1)
}

fn values(v: &[TrajectoryFeatureVector]) -> Vec<Vec<f64>> {
    v.iter().map(|f| f.values.clone()).collect()
}

fn loss_spec(ctx: &Context, pia: bool) -> FeatureSpec {
    FeatureSpec::loss_only()
        .with_pia(pia)
        .with_noise(ctx.cfg.spec.pia_norm_p, ctx.cfg.spec.repeats)
}

/// Calibrates the single-step threshold rule on the classifier training
/// splits, over every step.
pub fn calibrate(ctx: &Context, pia: bool) -> Result<ThresholdAttack> {
    let spec = loss_spec(ctx, pia);
    let m = ctx.features("member_train", &TimestepPlan::Full, &spec)?;
    let n = ctx.features("external_train", &TimestepPlan::Full, &spec)?;
    let steps: Vec<usize> = (0..ctx.schedule.num_steps()).collect();
    calibrate_with(&values(&m), &values(&n), &steps, pia, ctx.cfg.calibration)
}

fn threshold_report(ctx: &Context, attack: &ThresholdAttack, method: &str) -> Result<AttackReport> {
    let spec = loss_spec(ctx, attack.uses_pia);
    let steps: Vec<usize> = (0..ctx.schedule.num_steps()).collect();
    let m = ctx.features("member_eval", &TimestepPlan::Full, &spec)?;
    let n = ctx.features("external_eval", &TimestepPlan::Full, &spec)?;
    let mut scores = Vec::new();
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (set, label) in [(&m, true), (&n, false)] {
        for f in set {
            scores.push(-f.values[attack.t_star]);
            preds.push(threshold_decide(attack, &steps, &f.values)?);
            labels.push(label);
        }
    }
    let mut r = binary_report("mia", method, &scores, &labels, &preds)?;
    r.config = serde_json::to_value(attack)?;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepAuc {
    pub t: usize,
    pub auc: f64,
}

/// Evaluation AUC of `-L_t` for every step, and the best of them.
pub fn single_step_aucs(ctx: &Context) -> Result<(Vec<StepAuc>, StepAuc)> {
    let spec = loss_spec(ctx, false);
    let m = ctx.features("member_eval", &TimestepPlan::Full, &spec)?;
    let n = ctx.features("external_eval", &TimestepPlan::Full, &spec)?;
    let labels: Vec<bool> = m.iter().map(|_| true).chain(n.iter().map(|_| false)).collect();
    let mut out = Vec::new();
    for t in 0..ctx.schedule.num_steps() {
        let scores: Vec<f64> = m.iter().chain(&n).map(|f| -f.values[t]).collect();
        out.push(StepAuc { t, auc: roc_auc(&scores, &labels)? });
    }
    let best = *out
        .iter()
        .reduce(|a, b| if b.auc > a.auc { b } else { a })
        .expect("at least two steps");
    Ok((out, best))
}

fn gsa_report(ctx: &Context, mode: GsaMode, method: &str) -> Result<AttackReport> {
    let mut g = GsaConfig::default_for(mode, ctx.schedule.num_steps());
    g.groups = GsaGroups::Layers;
    let spec = FeatureSpec::gsa_only(g);
    let mut r = mia_classifier_report(ctx, method, &TimestepPlan::Full, &spec)?;
    r.config = serde_json::json!({"note": "GSA aggregates classified with the shared linear classifier"});
    Ok(r)
}

fn raw_labeled(ctx: &Context, parts: &[(&str, usize)]) -> Result<(Vec<(u64, Vec<f64>)>, Vec<usize>)> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (name, c) in parts {
        let r = ctx.raw(name)?;
        y.extend(std::iter::repeat(*c).take(r.len()));
        x.extend(r);
    }
    Ok((x, y))
}

fn model_blind_mia(ctx: &Context) -> Result<AttackReport> {
    let (x, y) = raw_labeled(ctx, &[("member_train", 1), ("external_train", 0)])?;
    let clf = model_blind_baseline(&x, &y, 2, "mia", &ctx.cfg.clf)?;
    let (xe, ye) = raw_labeled(ctx, &[("member_eval", 1), ("external_eval", 0)])?;
    let mut r = binary_eval("mia", "model_blind", &clf, &(raw_vectors(&xe), ye))?;
    r.config = serde_json::json!({"note": "linear classifier on raw data coordinates"});
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    pub methods: Vec<AttackReport>,
    pub threshold: ThresholdAttack,
    pub pia_threshold: ThresholdAttack,
    pub best_single_step: StepAuc,
    pub single_step_aucs: Vec<StepAuc>,
}

impl MiaReport {
    pub fn method(&self, name: &str) -> Option<&AttackReport> {
        self.methods.iter().find(|r| r.method == name)
    }
}

/// Member vs external with every method.
pub fn run_mia(ctx: &Context) -> Result<MiaReport> {
    let cfg = &ctx.cfg;
    let mut methods = Vec::new();
    let mut configured = mia_classifier_report(ctx, "trajectory", &cfg.plan, &cfg.spec)?;
    configured.config = serde_json::json!({"plan": cfg.plan, "spec": cfg.spec});
    methods.push(configured);
    let full_loss = FeatureSpec::loss_only().with_noise(cfg.spec.pia_norm_p, cfg.spec.repeats);
    let full_all = FeatureSpec::all().with_noise(cfg.spec.pia_norm_p, cfg.spec.repeats);
    methods.push(mia_classifier_report(ctx, "trajectory_loss", &TimestepPlan::Full, &full_loss)?);
    methods.push(mia_classifier_report(ctx, "trajectory_all", &TimestepPlan::Full, &full_all)?);
    let threshold = calibrate(ctx, false)?;
    methods.push(threshold_report(ctx, &threshold, "threshold")?);
    let pia_threshold = calibrate(ctx, true)?;
    methods.push(threshold_report(ctx, &pia_threshold, "pia_threshold")?);
    methods.push(gsa_report(ctx, GsaMode::Gsa1, "gsa1")?);
    methods.push(gsa_report(ctx, GsaMode::Gsa2, "gsa2")?);
    methods.push(model_blind_mia(ctx)?);
    let (single_step_aucs, best_single_step) = single_step_aucs(ctx)?;
    Ok(MiaReport {
        methods,
        threshold,
        pia_threshold,
        best_single_step,
        single_step_aucs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

fn mean_se(v: &[f64]) -> MeanSe {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    MeanSe { mean, se: (var / n).sqrt() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub t: usize,
    pub member: MeanSe,
    pub belonging: MeanSe,
    pub external: MeanSe,
    /// belonging < member < external, each gap above two standard errors.
    pub ordered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BelongingReport {
    pub attack: ThresholdAttack,
    pub fpr_external: f64,
    pub fpr_belonging: f64,
    pub per_t: Vec<StepLosses>,
    /// Longest run of consecutive ordered steps, as `[start, end)`.
    pub longest_ordered_run: (usize, usize),
    pub ordered_fraction: f64,
}

fn gap_ok(lo: MeanSe, hi: MeanSe) -> bool {
    hi.mean - lo.mean > 2.0 * (lo.se * lo.se + hi.se * hi.se).sqrt()
}

/// Per-step mean losses of the three origins and the threshold attack's
/// false-positive rates on external and belonging data.
pub fn run_threshold_on_belonging(ctx: &Context) -> Result<BelongingReport> {
    let attack = calibrate(ctx, false)?;
    let spec = loss_spec(ctx, false);
    let steps: Vec<usize> = (0..ctx.schedule.num_steps()).collect();
    let get = |a: &str, b: &str| -> Result<Vec<TrajectoryFeatureVector>> {
        let mut v = ctx.features(a, &TimestepPlan::Full, &spec)?;
        v.extend(ctx.features(b, &TimestepPlan::Full, &spec)?);
        Ok(v)
    };
    let member = get("member_train", "member_eval")?;
    let belonging = get("belonging_train", "belonging_eval")?;
    let external = get("external_train", "external_eval")?;
    let fpr = |name: &str| -> Result<f64> {
        let v = ctx.features(name, &TimestepPlan::Full, &spec)?;
        let hits = v
            .iter()
            .map(|f| threshold_decide(&attack, &steps, &f.values))
            .collect::<Result<Vec<bool>>>()?;
        Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
    };
    let column = |v: &[TrajectoryFeatureVector], t: usize| v.iter().map(|f| f.values[t]).collect::<Vec<f64>>();
    let mut per_t = Vec::with_capacity(steps.len());
    for &t in &steps {
        let m = mean_se(&column(&member, t));
        let b = mean_se(&column(&belonging, t));
        let e = mean_se(&column(&external, t));
        per_t.push(StepLosses {
            t,
            member: m,
            belonging: b,
            external: e,
            ordered: gap_ok(b, m) && gap_ok(m, e),
        });
    }
    let mut best = (0, 0);
    let mut start = None;
    for (i, s) in per_t.iter().enumerate() {
        match (s.ordered, start) {
            (true, None) => start = Some(i),
            (false, Some(a)) => {
                if i - a > best.1 - best.0 {
                    best = (a, i);
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        if per_t.len() - a > best.1 - best.0 {
            best = (a, per_t.len());
        }
    }
    Ok(BelongingReport {
        fpr_external: fpr("external_eval")?,
        fpr_belonging: fpr("belonging_eval")?,
        attack,
        ordered_fraction: (best.1 - best.0) as f64 / per_t.len() as f64,
        longest_ordered_run: best,
        per_t,
    })
}

/// CSV of per-step mean losses with standard errors.
pub fn losses_per_t_csv(r: &BelongingReport) -> String {
    let mut s = String::from("t,member_mean,member_se,belonging_mean,belonging_se,external_mean,external_se,ordered\n");
    for p in &r.per_t {
        s.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}\n",
            p.t, p.member.mean, p.member.se, p.belonging.mean, p.belonging.se, p.external.mean, p.external.se, p.ordered as u8
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlaggedSample {
    pub sample_id: u64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub flagged: Vec<FlaggedSample>,
    pub n_flagged: usize,
    pub n_unflagged: usize,
    pub median_flagged: Option<f64>,
    pub median_unflagged: Option<f64>,
    pub bin_edges: Vec<f64>,
    pub hist_flagged: Vec<usize>,
    pub hist_unflagged: Vec<usize>,
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

fn nearest(x: &[f64], reference: &[Vec<f64>]) -> f64 {
    reference
        .iter()
        .map(|r| r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

const FILTER_BINS: usize = 20;

/// Flags belonging samples the origin classifier calls members and measures
/// each sample's Euclidean distance to the nearest reference member.
pub fn filter_suspicious(
    clf: &LinearClassifier,
    belonging: &[(TrajectoryFeatureVector, Vec<f64>)],
    reference: &[Vec<f64>],
) -> Result<FilterReport> {
    if reference.is_empty() {
        return contract("filter needs a nonempty member reference set");
    }
    let mut flagged = Vec::new();
    let mut d_flagged = Vec::new();
    let mut d_unflagged = Vec::new();
    for (f, x) in belonging {
        let d = nearest(x, reference);
        if clf.predict(f)? == OriginLabel::Member.index() {
            flagged.push(FlaggedSample { sample_id: f.sample_id, distance: d });
            d_flagged.push(d);
        } else {
            d_unflagged.push(d);
        }
    }
    let max = d_flagged.iter().chain(&d_unflagged).cloned().fold(0.0, f64::max);
    let width = if max > 0.0 { max / FILTER_BINS as f64 } else { 1.0 };
    let bin_edges = (0..=FILTER_BINS).map(|i| i as f64 * width).collect();
    let hist = |v: &[f64]| {
        let mut h = vec![0; FILTER_BINS];
        for d in v {
            h[((d / width) as usize).min(FILTER_BINS - 1)] += 1;
        }
        h
    };
    Ok(FilterReport {
        n_flagged: d_flagged.len(),
        n_unflagged: d_unflagged.len(),
        median_flagged: median(&d_flagged),
        median_unflagged: median(&d_unflagged),
        hist_flagged: hist(&d_flagged),
        hist_unflagged: hist(&d_unflagged),
        bin_edges,
        flagged,
    })
}

/// Features of the same shape as `like`, filled with uniform noise.
fn uniform_control(like: &[TrajectoryFeatureVector], seed: u64) -> Vec<TrajectoryFeatureVector> {
    use rand::Rng;
    like.iter()
        .map(|f| {
            let mut r = rng::keyed(seed, &[rng::domain::CONTROL, f.sample_id]);
            TrajectoryFeatureVector {
                values: (0..f.values.len()).map(|_| r.random::<f64>()).collect(),
                spec_hash: "uniform-control".into(),
                ..f.clone()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OaReport {
    pub ovr: OvrReport,
    pub model_blind: OvrReport,
    pub uniform_control_asr: f64,
    pub filter: FilterReport,
}

fn oa_sets(ctx: &Context, plan: &TimestepPlan, spec: &FeatureSpec) -> Result<(Labeled, Labeled)> {
    let f = |n: &str| ctx.features(n, plan, spec);
    let m = OriginLabel::Member.index();
    let b = OriginLabel::Belonging.index();
    let e = OriginLabel::External.index();
    Ok((
        stack(vec![(f("member_train")?, m), (f("belonging_train")?, b), (f("external_train")?, e)]),
        stack(vec![(f("member_eval")?, m), (f("belonging_eval")?, b), (f("external_eval")?, e)]),
    ))
}

/// Three-way origin attribution, its controls and the extraction filter.
pub fn run_oa(ctx: &Context) -> Result<OaReport> {
    let cfg = &ctx.cfg;
    let (train, eval) = oa_sets(ctx, &cfg.plan, &cfg.spec)?;
    let (clf, _) = train_linear(&train.0, &train.1, 3, "oa", &cfg.clf)?;
    let ovr = one_vs_rest_report("oa", "trajectory", &logits_all(&clf, &eval.0)?, &eval.1, 3)?;

    let ctrl_train = uniform_control(&train.0, cfg.seeds.control);
    let ctrl_eval = uniform_control(&eval.0, cfg.seeds.control);
    let (ctrl, _) = train_linear(&ctrl_train, &train.1, 3, "oa", &cfg.clf)?;
    let ctrl_preds: Vec<usize> = logits_all(&ctrl, &ctrl_eval)?.iter().map(|l| argmax(l)).collect();
    let uniform_control_asr = asr(&ctrl_preds, &eval.1)?;

    let raw_parts = |suffix: &str| -> Result<(Vec<(u64, Vec<f64>)>, Vec<usize>)> {
        let p = task_splits(Task::Oa, suffix);
        let refs: Vec<(&str, usize)> = p.iter().map(|(n, c)| (n.as_str(), *c)).collect();
        raw_labeled(ctx, &refs)
    };
    let (x, y) = raw_parts("train")?;
    let blind = model_blind_baseline(&x, &y, 3, "oa", &cfg.clf)?;
    let (xe, ye) = raw_parts("eval")?;
    let model_blind = one_vs_rest_report("oa", "model_blind", &logits_all(&blind, &raw_vectors(&xe))?, &ye, 3)?;

    let bel_feats = ctx.features("belonging_eval", &cfg.plan, &cfg.spec)?;
    let bel: Vec<(TrajectoryFeatureVector, Vec<f64>)> = bel_feats
        .into_iter()
        .zip(ctx.split("belonging_eval")?)
        .map(|(f, s)| (f, s.x.clone()))
        .collect();
    let reference = ctx.bundle.members();
    let filter = filter_suspicious(&clf, &bel, &reference)?;
    Ok(OaReport {
        ovr,
        model_blind,
        uniform_control_asr,
        filter,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaReport {
    pub trajectory: BalancedAccuracyReport,
    pub model_blind: BalancedAccuracyReport,
    /// Fraction of each generated source the model-blind baseline calls
    /// belonging.
    pub model_blind_belonging_rate: Vec<(String, f64)>,
    pub second_net_final_loss: f64,
}

/// Generated sets from a different sampler and a different network.
pub fn foreign_samples(ctx: &Context) -> Result<(Vec<Sample>, Vec<Sample>, f64)> {
    let cfg = &ctx.cfg;
    let n = cfg.counts.belonging_eval;
    let seed = rng::mix_key(cfg.seeds.sample, &[split::FOREIGN_DDIM]);
    let ddim = sample_dataset(&ctx.params, &ctx.schedule, n, SamplerKind::Ddim { steps: cfg.foreign.ddim_steps }, seed)?;
    let mut second = cfg.clone();
    second.arch = ArchConfig {
        hidden_widths: cfg.foreign.hidden_widths.clone(),
        ..cfg.arch.clone()
    };
    second.ddpm.seed = cfg.foreign.seed;
    let (net, history) = train_model(&second, &ctx.bundle)?;
    let seed = rng::mix_key(cfg.seeds.sample, &[split::FOREIGN_NET]);
    let other = sample_dataset(&net, &ctx.schedule, n, SamplerKind::Ancestral, seed)?;
    Ok((
        generated(split::FOREIGN_DDIM, ddim),
        generated(split::FOREIGN_NET, other),
        history.last().map_or(f64::NAN, |h| h.mean_loss),
    ))
}

/// Belonging vs real data, evaluated per generator.
pub fn run_ma(ctx: &Context) -> Result<MaReport> {
    let cfg = &ctx.cfg;
    let (ddim, other, second_loss) = foreign_samples(ctx)?;
    let f = |n: &str| ctx.features(n, &cfg.plan, &cfg.spec);
    let train = stack(vec![
        (f("belonging_train")?, 1),
        (f("member_train")?, 0),
        (f("external_train")?, 0),
    ]);
    let (clf, _) = train_linear(&train.0, &train.1, 2, "ma", &cfg.clf)?;
    let sources: Vec<(&str, Vec<Sample>)> = vec![
        ("ddpm", ctx.split("belonging_eval")?.to_vec()),
        ("ddim", ddim),
        ("second_net", other),
    ];
    let mut traj = Vec::new();
    let mut blind_in = Vec::new();
    for (name, samples) in &sources {
        let feats = ctx.extract_direct(samples, &cfg.plan, &cfg.spec)?;
        let preds = feats
            .iter()
            .map(|v| Ok(clf.predict(v)? == 1))
            .collect::<Result<Vec<bool>>>()?;
        traj.push((name.to_string(), *name == "ddpm", preds));
        blind_in.push((name, samples));
    }
    let (x, y) = raw_labeled(
        ctx,
        &[("belonging_train", 1), ("member_train", 0), ("external_train", 0)],
    )?;
    let blind = model_blind_baseline(&x, &y, 2, "ma", &cfg.clf)?;
    let mut blind_preds = Vec::new();
    let mut rates = Vec::new();
    for (name, samples) in blind_in {
        let raw: Vec<(u64, Vec<f64>)> = samples.iter().map(|s| (s.id, s.x.clone())).collect();
        let preds = raw_vectors(&raw)
            .iter()
            .map(|v| Ok(blind.predict(v)? == 1))
            .collect::<Result<Vec<bool>>>()?;
        rates.push((name.to_string(), preds.iter().filter(|&&p| p).count() as f64 / preds.len() as f64));
        blind_preds.push((name.to_string(), *name == "ddpm", preds));
    }
    Ok(MaReport {
        trajectory: class_balanced_accuracy(&traj)?,
        model_blind: class_balanced_accuracy(&blind_preds)?,
        model_blind_belonging_rate: rates,
        second_net_final_loss: second_loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub components: Vec<usize>,
    pub chance: f64,
    pub accuracy_all: f64,
    pub accuracy_loss_only: f64,
    /// Mean over label permutations of the training set.
    pub shuffled_control: f64,
    pub n_train: usize,
    pub n_eval: usize,
}

const PROBE_SHUFFLES: usize = 10;

/// Predicts the mixture component of members from their trajectories.
pub fn run_class_probe(ctx: &Context) -> Result<ProbeReport> {
    use rand::seq::SliceRandom;
    let cfg = &ctx.cfg;
    let comps = &cfg.probe_components;
    if comps.len() < 2 {
        return contract("class probe needs at least two components");
    }
    let pick = |name: &str, spec: &FeatureSpec| -> Result<Labeled> {
        let samples = ctx.split(name)?;
        let feats = ctx.features(name, &TimestepPlan::Full, spec)?;
        let mut f = Vec::new();
        let mut y = Vec::new();
        for (s, v) in samples.iter().zip(feats) {
            if let Some(c) = s.component.and_then(|c| comps.iter().position(|&k| k == c)) {
                f.push(v);
                y.push(c);
            }
        }
        Ok((f, y))
    };
    let k = comps.len();
    let accuracy = |spec: &FeatureSpec| -> Result<(f64, Labeled, Labeled)> {
        let train = pick("member_train", spec)?;
        let eval = pick("member_eval", spec)?;
        let (clf, _) = train_linear(&train.0, &train.1, k, "probe", &cfg.clf)?;
        let preds: Vec<usize> = logits_all(&clf, &eval.0)?.iter().map(|l| argmax(l)).collect();
        Ok((asr(&preds, &eval.1)?, train, eval))
    };
    let all = FeatureSpec::all().with_noise(cfg.spec.pia_norm_p, cfg.spec.repeats);
    let (accuracy_all, train, eval) = accuracy(&all)?;
    let (accuracy_loss_only, _, _) = accuracy(&loss_spec(ctx, false))?;
    let mut shuffled = 0.0;
    for i in 0..PROBE_SHUFFLES {
        let mut y = train.1.clone();
        y.shuffle(&mut rng::keyed(cfg.seeds.control, &[rng::domain::CONTROL, u64::MAX, i as u64]));
        let (clf, _) = train_linear(&train.0, &y, k, "probe", &cfg.clf)?;
        let preds: Vec<usize> = logits_all(&clf, &eval.0)?.iter().map(|l| argmax(l)).collect();
        shuffled += asr(&preds, &eval.1)?;
    }
    Ok(ProbeReport {
        components: comps.clone(),
        chance: 1.0 / k as f64,
        accuracy_all,
        accuracy_loss_only,
        shuffled_control: shuffled / PROBE_SHUFFLES as f64,
        n_train: train.1.len(),
        n_eval: eval.1.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub families: String,
    pub pia: bool,
    pub auc: f64,
    pub tpr_at_1pct_fpr: f64,
    pub asr: f64,
}

/// The fourteen per-step family combinations, with and without PIA.
pub fn ablation_grid(base: &FeatureSpec) -> Vec<FeatureSpec> {
    let mut out = Vec::new();
    for pia in [false, true] {
        for mask in 1..8u8 {
            let s = FeatureSpec::new(mask & 1 != 0, mask & 2 != 0, mask & 4 != 0)
                .with_pia(pia)
                .with_noise(base.pia_norm_p, base.repeats);
            out.push(s);
        }
    }
    out
}

fn families(s: &FeatureSpec) -> String {
    let mut v = Vec::new();
    if s.use_loss {
        v.push("L");
    }
    if s.use_grad_x {
        v.push("grad_x");
    }
    if s.use_grad_theta {
        v.push("grad_theta");
    }
    v.join("+")
}

/// MIA with every feature combination on shared splits.
pub fn run_ablation(ctx: &Context) -> Result<Vec<AblationRow>> {
    ablation_grid(&ctx.cfg.spec)
        .iter()
        .map(|s| {
            let r = mia_classifier_report(ctx, &s.label(), &TimestepPlan::Full, s)?;
            Ok(AblationRow {
                families: families(s),
                pia: s.pia_mode,
                auc: r.auc,
                tpr_at_1pct_fpr: r.tpr_at_1pct_fpr,
                asr: r.asr,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("families,pia,auc,tpr_at_1pct_fpr,asr\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.6},{:.6},{:.6}\n", r.families, r.pia, r.auc, r.tpr_at_1pct_fpr, r.asr));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub plan: String,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub budget: usize,
    pub strided: PlanRow,
    pub windows: Vec<PlanRow>,
    pub best_window: PlanRow,
}

/// Global strided plan against contiguous windows of the same size.
pub fn run_plan_comparison(ctx: &Context) -> Result<PlanReport> {
    let t = ctx.schedule.num_steps();
    let q = ctx.cfg.query_budget;
    let spec = FeatureSpec {
        gsa: None,
        ..ctx.cfg.spec.clone()
    };
    if !(spec.use_loss || spec.use_grad_x || spec.use_grad_theta) {
        return Err(Error::Pipeline("plan comparison needs per-step features".into()));
    }
    let row = |plan: TimestepPlan| -> Result<PlanRow> {
        let r = mia_classifier_report(ctx, &plan.label(), &plan, &spec)?;
        Ok(PlanRow { plan: plan.label(), auc: r.auc })
    };
    let strided = row(TimestepPlan::Strided { stride: t / q, offset: 0 })?;
    let windows = (0..t / q)
        .map(|k| row(TimestepPlan::Window { start: k * q, end: (k + 1) * q }))
        .collect::<Result<Vec<_>>>()?;
    let best_window = windows
        .iter()
        .cloned()
        .reduce(|a, b| if b.auc > a.auc { b } else { a })
        .expect("budget leaves at least one window");
    Ok(PlanReport {
        budget: q,
        strided,
        windows,
        best_window,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OaOutput {
    pub version: String,
    pub config: ExperimentConfig,
    pub ddpm_final_loss: f64,
    pub oa: OaReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub ddpm_final_loss: f64,
    pub mia: MiaReport,
    pub belonging: BelongingReport,
    pub oa: OaReport,
    pub ma: MaReport,
    pub probe: ProbeReport,
    pub ablation: Vec<AblationRow>,
    pub plans: PlanReport,
}

fn final_loss(ctx: &Context) -> f64 {
    ctx.ddpm_history.last().map_or(f64::NAN, |h| h.mean_loss)
}

pub fn oa_output(ctx: &Context) -> Result<OaOutput> {
    Ok(OaOutput {
        version: super::VERSION.into(),
        config: ctx.cfg.clone(),
        ddpm_final_loss: final_loss(ctx),
        oa: run_oa(ctx)?,
    })
}

pub fn run_all(ctx: &Context) -> Result<FullReport> {
    Ok(FullReport {
        version: super::VERSION.into(),
        config: ctx.cfg.clone(),
        ddpm_final_loss: final_loss(ctx),
        mia: run_mia(ctx)?,
        belonging: run_threshold_on_belonging(ctx)?,
        oa: run_oa(ctx)?,
        ma: run_ma(ctx)?,
        probe: run_class_probe(ctx)?,
        ablation: run_ablation(ctx)?,
        plans: run_plan_comparison(ctx)?,
    })
}

/// ROC curves worth plotting, keyed by a file-name stem.
/// Headline numbers of every experiment, one per line.
pub fn summary_csv(r: &FullReport) -> String {
    let mut s = String::from("experiment,metric,value\n");
    let mut row = |e: &str, m: &str, v: f64| s.push_str(&format!("{e},{m},{v:.6}\n"));
    for m in &r.mia.methods {
        row("mia", &format!("{}_auc", m.method), m.auc);
        row("mia", &format!("{}_tpr_at_1pct_fpr", m.method), m.tpr_at_1pct_fpr);
        row("mia", &format!("{}_asr", m.method), m.asr);
    }
    row("mia", "best_single_step_auc", r.mia.best_single_step.auc);
    row("belonging", "fpr_external", r.belonging.fpr_external);
    row("belonging", "fpr_belonging", r.belonging.fpr_belonging);
    row("belonging", "ordered_fraction", r.belonging.ordered_fraction);
    row("oa", "auc", r.oa.ovr.summary.auc);
    row("oa", "asr", r.oa.ovr.summary.asr);
    row("oa", "model_blind_asr", r.oa.model_blind.summary.asr);
    row("oa", "uniform_control_asr", r.oa.uniform_control_asr);
    row("oa", "filter_flagged", r.oa.filter.n_flagged as f64);
    row("oa", "filter_median_flagged", r.oa.filter.median_flagged.unwrap_or(f64::NAN));
    row("oa", "filter_median_unflagged", r.oa.filter.median_unflagged.unwrap_or(f64::NAN));
    for src in &r.ma.trajectory.per_source {
        row("ma", &format!("{}_accuracy", src.source), src.accuracy);
    }
    row("ma", "overall", r.ma.trajectory.overall);
    row("ma", "model_blind_overall", r.ma.model_blind.overall);
    row("probe", "accuracy_all", r.probe.accuracy_all);
    row("probe", "accuracy_loss_only", r.probe.accuracy_loss_only);
    row("probe", "shuffled_control", r.probe.shuffled_control);
    for a in &r.ablation {
        row("ablation", &format!("{}{}_auc", a.families, if a.pia { "_pia" } else { "" }), a.auc);
    }
    row("plans", "strided_auc", r.plans.strided.auc);
    row("plans", "best_window_auc", r.plans.best_window.auc);
    s
}

pub fn oa_roc_curves(oa: &OaReport) -> Vec<(String, RocCurve)> {
    oa.ovr
        .per_class
        .iter()
        .map(|c| (format!("oa_{}", OriginLabel::ALL[c.class].name()), c.roc.clone()))
        .collect()
}
