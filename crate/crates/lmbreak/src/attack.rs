//! L∞-bounded sign-gradient attacks on heat-map extractors.
//!
//! The objective is a per-map cosine similarity between the heat-maps of the
//! perturbed image and the reference maps of the original; minimizing it
//! drags every predicted map away from its original, which scatters the
//! decoded landmarks. The optimizer family:
//!
//! * `LB` — momentum iterative sign steps, L1-normalized gradient
//!   accumulation with decay λ.
//! * `FGSM` — a single sign step of size α.
//! * `IFGSM` — iterative sign steps, no momentum, raw gradient sign.
//! * `LB_trans` — `LB` with a random resize + zero-pad transform each
//!   iteration, gradient taken through the transform.
//! * `LB_mix` — alternating `IFGSM` (even) and `LB` (odd) updates with a
//!   persistent momentum buffer.
//!
//! Budget handling: `project` clamps each iterate into the ε-ball (and
//! `[0, 255]`); `literal` keeps the raw iterates and exits after the first
//! update that leaves the ball, so the final deviation can reach ε + α.
//!
//! One attack invocation is internally sequential (each iterate depends on
//! the previous one); attacks on distinct images share no state and run
//! freely in parallel.

use crate::error::{Error, Result};
use crate::extractor::Checkpoint;
use crate::landmarks::HeatmapSet;
use crate::tensor::{resize_bilinear, resize_bilinear_adjoint, ImageTensor, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stabilizer added to the cosine denominator.
pub const COSINE_DELTA: f64 = 1e-8;

/// Resize range for the `LB_trans` input transform.
pub const TRANS_SCALE_RANGE: (f64, f64) = (0.9, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    LB,
    FGSM,
    IFGSM,
    #[serde(rename = "LB_trans")]
    LBTrans,
    #[serde(rename = "LB_mix")]
    LBMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    Project,
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// L∞ budget in pixel units.
    pub epsilon: f64,
    /// Step size in pixel units.
    pub alpha: f64,
    pub max_iters: usize,
    pub momentum_decay: f64,
    pub variant: Variant,
    pub budget_mode: BudgetMode,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 15.0,
            alpha: 1.0,
            max_iters: 20,
            momentum_decay: 0.5,
            variant: Variant::LB,
            budget_mode: BudgetMode::Project,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 || self.epsilon.is_nan() {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.alpha <= 0.0 || self.alpha.is_nan() {
            return Err(Error::InvalidConfig(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.momentum_decay) {
            return Err(Error::InvalidConfig(format!(
                "momentum_decay must be in [0, 1], got {}",
                self.momentum_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Ran to the iteration cap.
    Completed,
    /// Literal mode: an update left the ε-ball and the loop exited.
    BudgetExceeded,
    /// The gradient L1 norm hit zero; nothing left to follow.
    FlatGradient,
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: ImageTensor,
    /// Loss observed at the start of each executed iteration.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub linf_dev: f64,
    pub final_loss: f64,
    pub termination: Termination,
    pub config: AttackConfig,
}

/// Sum over maps of flattened cosine similarity, stabilized by
/// [`COSINE_DELTA`]; range is within `[-k, k]`.
pub fn heatmap_cosine_loss(pred: &HeatmapSet, reference: &HeatmapSet) -> Result<f64> {
    if pred.maps().shape() != reference.maps().shape() {
        return Err(Error::shape(
            reference.maps().shape_str(),
            pred.maps().shape_str(),
        ));
    }
    Ok(cosine_loss_and_grad(pred.maps(), reference.maps())?.0)
}

/// Loss plus dL/dpred. `pred` and `reference` are (k, h, w) map stacks;
/// each map is flattened for the inner product.
pub(crate) fn cosine_loss_and_grad(pred: &Tensor, reference: &Tensor) -> Result<(f64, Tensor)> {
    debug_assert_eq!(pred.shape(), reference.shape());
    let k = pred.channels();
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(k, pred.height(), pred.width());
    for i in 0..k {
        let p = pred.plane(i);
        let r = reference.plane(i);
        let mut dot = 0.0;
        let mut np2 = 0.0;
        let mut nr2 = 0.0;
        for j in 0..p.len() {
            dot += p[j] * r[j];
            np2 += p[j] * p[j];
            nr2 += r[j] * r[j];
        }
        let np = np2.sqrt();
        let nr = nr2.sqrt();
        let q = np * nr + COSINE_DELTA;
        loss += dot / q;
        let g = grad.plane_mut(i);
        if np > 0.0 {
            let coef = dot * nr / (np * q * q);
            for j in 0..p.len() {
                g[j] = r[j] / q - coef * p[j];
            }
        } else {
            for j in 0..p.len() {
                g[j] = r[j] / q;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("cosine loss".into()));
    }
    Ok((loss, grad))
}

/// Per-pixel clamp of `candidate` into `[origin - eps, origin + eps] ∩ [0, 255]`.
pub fn project_linf(candidate: &ImageTensor, origin: &ImageTensor, eps: f64) -> ImageTensor {
    assert!(candidate.same_shape(origin), "project_linf shape mismatch");
    let mut out = candidate.clone();
    for (v, &o) in out.data_mut().iter_mut().zip(origin.data()) {
        *v = v.clamp(o - eps, o + eps).clamp(0.0, 255.0);
    }
    out
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Momentum iterative attack (`variant` forced to `LB`).
pub fn mifgsm_attack(ckpt: &Checkpoint, image: &ImageTensor, config: &AttackConfig) -> Result<AttackResult> {
    run_attack(ckpt, image, &AttackConfig { variant: Variant::LB, ..config.clone() })
}

/// Single-step baseline (Base1): one sign step of size α.
pub fn fgsm_attack(ckpt: &Checkpoint, image: &ImageTensor, config: &AttackConfig) -> Result<AttackResult> {
    run_attack(ckpt, image, &AttackConfig { variant: Variant::FGSM, ..config.clone() })
}

/// Iterative no-momentum baseline (Base2); raw gradient sign, same α and T
/// as the momentum attack.
pub fn ifgsm_attack(ckpt: &Checkpoint, image: &ImageTensor, config: &AttackConfig) -> Result<AttackResult> {
    run_attack(ckpt, image, &AttackConfig { variant: Variant::IFGSM, ..config.clone() })
}

/// Resize-diversity transfer variant.
pub fn lbtrans_attack(ckpt: &Checkpoint, image: &ImageTensor, config: &AttackConfig) -> Result<AttackResult> {
    run_attack(ckpt, image, &AttackConfig { variant: Variant::LBTrans, ..config.clone() })
}

/// Update-mixing transfer variant.
pub fn lbmix_attack(ckpt: &Checkpoint, image: &ImageTensor, config: &AttackConfig) -> Result<AttackResult> {
    run_attack(ckpt, image, &AttackConfig { variant: Variant::LBMix, ..config.clone() })
}

pub fn run_attack(ckpt: &Checkpoint, image: &ImageTensor, config: &AttackConfig) -> Result<AttackResult> {
    run_attack_traced(ckpt, image, config, TRANS_SCALE_RANGE, |_, _| {})
}

/// Attack engine with an iterate observer: `on_iterate(t, image_t)` fires at
/// t = 0 with the original and after every completed update. Because the
/// trajectory of a projected run does not depend on the iteration cap, the
/// observer at step t yields the exact result an attack with `max_iters = t`
/// would return — the iteration-count sweep uses this.
///
/// `scale_range` overrides the `LB_trans` resize range (diagnostics only).
pub fn run_attack_traced<F: FnMut(usize, &ImageTensor)>(
    ckpt: &Checkpoint,
    image: &ImageTensor,
    config: &AttackConfig,
    scale_range: (f64, f64),
    mut on_iterate: F,
) -> Result<AttackResult> {
    config.validate()?;
    let ref_maps = ckpt.forward(image)?;
    let (_, h, w) = image.shape();
    let mut current = image.clone();
    let mut momentum = Tensor::zeros(3, h, w);
    let mut trace = Vec::new();
    let mut termination = Termination::Completed;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut iterations = 0usize;
    on_iterate(0, &current);

    let steps = match config.variant {
        Variant::FGSM => 1,
        _ => config.max_iters,
    };

    for t in 0..steps {
        let (loss, grad) = match config.variant {
            Variant::LBTrans => transformed_gradient(ckpt, &current, &ref_maps, scale_range, &mut rng)?,
            _ => ckpt.input_gradient(&current, &ref_maps)?,
        };
        trace.push(loss);
        let l1: f64 = grad.data().iter().map(|v| v.abs()).sum();
        if l1 == 0.0 {
            termination = Termination::FlatGradient;
            break;
        }

        let use_momentum = match config.variant {
            Variant::LB | Variant::LBTrans => true,
            Variant::LBMix => t % 2 == 1,
            Variant::FGSM | Variant::IFGSM => false,
        };
        let step_alpha = config.alpha;

        if use_momentum {
            let lambda = config.momentum_decay;
            for (m, g) in momentum.data_mut().iter_mut().zip(grad.data()) {
                *m = lambda * *m + g / l1;
            }
            for (v, m) in current.data_mut().iter_mut().zip(momentum.data()) {
                *v = (*v - step_alpha * sign(*m)).clamp(0.0, 255.0);
            }
        } else {
            for (v, g) in current.data_mut().iter_mut().zip(grad.data()) {
                *v = (*v - step_alpha * sign(*g)).clamp(0.0, 255.0);
            }
        }

        match config.budget_mode {
            BudgetMode::Project => {
                current = project_linf(&current, image, config.epsilon);
                iterations = t + 1;
                on_iterate(iterations, &current);
            }
            BudgetMode::Literal => {
                iterations = t + 1;
                on_iterate(iterations, &current);
                if current.linf_dev(image) > config.epsilon {
                    termination = Termination::BudgetExceeded;
                    break;
                }
            }
        }
    }

    let final_loss = heatmap_cosine_loss(&ckpt.forward(&current)?, &ref_maps)?;
    Ok(AttackResult {
        linf_dev: current.linf_dev(image),
        adversarial: current,
        loss_trace: trace,
        iterations,
        final_loss,
        termination,
        config: config.clone(),
    })
}

/// One `LB_trans` gradient: draw a scale, bilinear-resize the iterate, place
/// it at a random offset on a zero canvas, differentiate the loss through
/// network, crop and resize-adjoint back to the original pixel grid.
fn transformed_gradient(
    ckpt: &Checkpoint,
    current: &ImageTensor,
    ref_maps: &HeatmapSet,
    scale_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Tensor)> {
    let (_, h, w) = current.shape();
    let (lo, hi) = scale_range;
    let s = if lo >= hi { lo } else { rng.gen_range(lo..hi) };
    let h2 = ((h as f64 * s).round() as usize).clamp(1, h);
    let w2 = ((w as f64 * s).round() as usize).clamp(1, w);
    if h2 == h && w2 == w {
        return ckpt.input_gradient(current, ref_maps);
    }
    let small = resize_bilinear(current, h2, w2);
    let oy = rng.gen_range(0..=(h - h2));
    let ox = rng.gen_range(0..=(w - w2));
    let mut padded = Tensor::zeros(3, h, w);
    for c in 0..3 {
        for y in 0..h2 {
            let src = &small.plane(c)[y * w2..(y + 1) * w2];
            let dst_off = (oy + y) * w + ox;
            padded.plane_mut(c)[dst_off..dst_off + w2].copy_from_slice(src);
        }
    }
    let (loss, g_padded) = ckpt.input_gradient(&padded, ref_maps)?;
    let g_small = g_padded.crop(oy, oy + h2, ox, ox + w2);
    Ok((loss, resize_bilinear_adjoint(&g_small, h, w)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::{Architecture, Checkpoint, ExtractorSpec};
    use crate::landmarks::HeatmapSet;

    fn rand_maps(k: usize, h: usize, w: usize, seed: u64) -> HeatmapSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(k, h, w);
        for v in t.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        HeatmapSet::new(t, 4)
    }

    fn tiny_ckpt(arch: Architecture, seed: u64) -> Checkpoint {
        Checkpoint::init(ExtractorSpec::new(arch, 5, (32, 32)).unwrap(), seed)
    }

    fn rand_image(seed: u64, h: usize, w: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(3, h, w);
        for v in t.data_mut() {
            *v = rng.gen_range(40.0..215.0_f64).round();
        }
        t
    }

    #[test]
    fn loss_of_identical_maps_is_k() {
        let m = rand_maps(7, 8, 8, 1);
        let loss = heatmap_cosine_loss(&m, &m).unwrap();
        assert!((loss - 7.0).abs() < 1e-6, "loss={loss}");
    }

    #[test]
    fn loss_of_negated_maps_is_minus_k() {
        let m = rand_maps(4, 8, 8, 2);
        let mut neg = m.maps().clone();
        for v in neg.data_mut() {
            *v = -*v;
        }
        let loss = heatmap_cosine_loss(&HeatmapSet::new(neg, 4), &m).unwrap();
        assert!((loss + 4.0).abs() < 1e-6, "loss={loss}");
    }

    #[test]
    fn loss_matches_per_map_scalar_oracle() {
        let a = rand_maps(3, 6, 5, 3);
        let b = rand_maps(3, 6, 5, 4);
        let loss = heatmap_cosine_loss(&a, &b).unwrap();
        // independent per-map dot/norm computation
        let mut oracle = 0.0;
        for i in 0..3 {
            let (p, r) = (a.map(i), b.map(i));
            let dot: f64 = p.iter().zip(r).map(|(x, y)| x * y).sum();
            let np: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nr: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            oracle += dot / (np * nr + 1e-8);
        }
        assert!((loss - oracle).abs() < 1e-9);
    }

    #[test]
    fn loss_rejects_shape_mismatch() {
        let a = rand_maps(3, 6, 5, 5);
        let b = rand_maps(3, 5, 6, 6);
        assert!(heatmap_cosine_loss(&a, &b).is_err());
    }

    #[test]
    fn cosine_grad_matches_finite_differences() {
        let a = rand_maps(2, 4, 4, 7);
        let b = rand_maps(2, 4, 4, 8);
        let (_, grad) = cosine_loss_and_grad(a.maps(), b.maps()).unwrap();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let i = rng.gen_range(0..a.maps().data().len());
            let mut ap = a.maps().clone();
            ap.data_mut()[i] += h;
            let mut am = a.maps().clone();
            am.data_mut()[i] -= h;
            let lp = cosine_loss_and_grad(&ap, b.maps()).unwrap().0;
            let lm = cosine_loss_and_grad(&am, b.maps()).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grad.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn project_is_identity_inside_ball() {
        let img = rand_image(10, 8, 8);
        assert_eq!(project_linf(&img, &img, 15.0), img);
    }

    #[test]
    fn project_clamps_single_pixel_case() {
        let mut origin = Tensor::zeros(3, 1, 1);
        origin.data_mut().fill(100.0);
        let mut cand = Tensor::zeros(3, 1, 1);
        cand.data_mut().fill(130.0);
        let out = project_linf(&cand, &origin, 15.0);
        assert!(out.data().iter().all(|&v| v == 115.0));
    }

    #[test]
    #[allow(clippy::manual_clamp)] // the oracle deliberately avoids clamp
    fn project_matches_per_pixel_scalar_oracle() {
        let origin = rand_image(11, 6, 6);
        let mut cand = origin.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for v in cand.data_mut() {
            *v += rng.gen_range(-60.0..60.0);
        }
        let eps = 9.5;
        let out = project_linf(&cand, &origin, eps);
        for ((&o, &c), &p) in origin.data().iter().zip(cand.data()).zip(out.data()) {
            let mut expect = c;
            if expect > o + eps {
                expect = o + eps;
            }
            if expect < o - eps {
                expect = o - eps;
            }
            expect = expect.max(0.0).min(255.0);
            assert_eq!(p, expect);
        }
    }

    #[test]
    fn config_serializes_with_exact_field_names() {
        let cfg = AttackConfig::default();
        let v = serde_json::to_value(&cfg).unwrap();
        let obj = v.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(|s| s.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            ["alpha", "budget_mode", "epsilon", "max_iters", "momentum_decay", "seed", "variant"]
        );
        assert_eq!(obj["variant"], "LB");
        assert_eq!(obj["budget_mode"], "project");
        let round: AttackConfig = serde_json::from_value(v).unwrap();
        assert_eq!(round, cfg);
        for variant in ["FGSM", "IFGSM", "LB_trans", "LB_mix"] {
            let json = format!(
                "{{\"epsilon\":15,\"alpha\":1,\"max_iters\":5,\"momentum_decay\":0.5,\"variant\":\"{variant}\",\"budget_mode\":\"literal\",\"seed\":3}}"
            );
            let parsed: AttackConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(serde_json::to_value(&parsed).unwrap()["variant"], variant);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            AttackConfig { epsilon: -1.0, ..AttackConfig::default() },
            AttackConfig { alpha: 0.0, ..AttackConfig::default() },
            AttackConfig { momentum_decay: 1.5, ..AttackConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn zero_iterations_is_a_noop() {
        let ckpt = tiny_ckpt(Architecture::EncdecMini, 1);
        let img = rand_image(2, 32, 32);
        let cfg = AttackConfig {
            max_iters: 0,
            ..AttackConfig::default()
        };
        let res = run_attack(&ckpt, &img, &cfg).unwrap();
        assert_eq!(res.adversarial, img);
        assert_eq!(res.iterations, 0);
        assert_eq!(res.linf_dev, 0.0);
        assert!((res.final_loss - 5.0).abs() < 1e-6);
    }

    #[test]
    fn zero_epsilon_projected_attack_is_identity() {
        let ckpt = tiny_ckpt(Architecture::HourglassMini, 3);
        let img = rand_image(4, 32, 32);
        let cfg = AttackConfig {
            epsilon: 0.0,
            max_iters: 4,
            ..AttackConfig::default()
        };
        let res = run_attack(&ckpt, &img, &cfg).unwrap();
        assert_eq!(res.adversarial, img);
        let fg = fgsm_attack(&ckpt, &img, &cfg).unwrap();
        assert_eq!(fg.adversarial, img);
    }

    #[test]
    fn fgsm_deviation_is_sign_structured() {
        let ckpt = tiny_ckpt(Architecture::HiresParallelMini, 5);
        // interior pixel values keep the [0,255] clip inactive
        let img = rand_image(6, 32, 32);
        let cfg = AttackConfig {
            alpha: 3.0,
            ..AttackConfig::default()
        };
        let res = fgsm_attack(&ckpt, &img, &cfg).unwrap();
        assert_eq!(res.iterations, 1);
        for (a, o) in res.adversarial.data().iter().zip(img.data()) {
            let d = a - o;
            assert!(
                d == 0.0 || (d - 3.0).abs() < 1e-12 || (d + 3.0).abs() < 1e-12,
                "deviation {d}"
            );
        }
    }

    #[test]
    fn lb_with_zero_decay_equals_ifgsm_iterates() {
        let ckpt = tiny_ckpt(Architecture::EncdecMini, 7);
        let img = rand_image(8, 32, 32);
        let cfg = AttackConfig {
            momentum_decay: 0.0,
            max_iters: 6,
            ..AttackConfig::default()
        };
        let mut lb_iterates = Vec::new();
        run_attack_traced(&ckpt, &img, &cfg, TRANS_SCALE_RANGE, |_, im| {
            lb_iterates.push(im.clone())
        })
        .unwrap();
        let mut if_iterates = Vec::new();
        let cfg_if = AttackConfig {
            variant: Variant::IFGSM,
            ..cfg.clone()
        };
        run_attack_traced(&ckpt, &img, &cfg_if, TRANS_SCALE_RANGE, |_, im| {
            if_iterates.push(im.clone())
        })
        .unwrap();
        assert_eq!(lb_iterates.len(), if_iterates.len());
        for (a, b) in lb_iterates.iter().zip(&if_iterates) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn lbmix_with_zero_decay_equals_ifgsm_for_all_t() {
        let ckpt = tiny_ckpt(Architecture::HourglassMini, 9);
        let img = rand_image(10, 32, 32);
        for t in [1, 2, 5] {
            let base = AttackConfig {
                momentum_decay: 0.0,
                max_iters: t,
                ..AttackConfig::default()
            };
            let mix = run_attack(&ckpt, &img, &AttackConfig { variant: Variant::LBMix, ..base.clone() }).unwrap();
            let ifg = run_attack(&ckpt, &img, &AttackConfig { variant: Variant::IFGSM, ..base }).unwrap();
            assert_eq!(mix.adversarial, ifg.adversarial, "t={t}");
        }
    }

    #[test]
    fn lbmix_first_step_is_an_ifgsm_step() {
        let ckpt = tiny_ckpt(Architecture::EncdecMini, 11);
        let img = rand_image(12, 32, 32);
        let cfg = AttackConfig {
            max_iters: 1,
            momentum_decay: 0.7,
            ..AttackConfig::default()
        };
        let mix = run_attack(&ckpt, &img, &AttackConfig { variant: Variant::LBMix, ..cfg.clone() }).unwrap();
        let ifg = run_attack(&ckpt, &img, &AttackConfig { variant: Variant::IFGSM, ..cfg }).unwrap();
        assert_eq!(mix.adversarial, ifg.adversarial);
    }

    #[test]
    fn lbtrans_with_unit_scale_equals_lb() {
        let ckpt = tiny_ckpt(Architecture::HiresParallelMini, 13);
        let img = rand_image(14, 32, 32);
        let cfg = AttackConfig {
            max_iters: 5,
            variant: Variant::LBTrans,
            ..AttackConfig::default()
        };
        let trans = run_attack_traced(&ckpt, &img, &cfg, (1.0, 1.0), |_, _| {}).unwrap();
        let lb = run_attack(&ckpt, &img, &AttackConfig { variant: Variant::LB, ..cfg }).unwrap();
        assert_eq!(trans.adversarial, lb.adversarial);
    }

    #[test]
    fn lbtrans_is_deterministic_under_seed() {
        let ckpt = tiny_ckpt(Architecture::EncdecMini, 15);
        let img = rand_image(16, 32, 32);
        let cfg = AttackConfig {
            variant: Variant::LBTrans,
            max_iters: 6,
            seed: 99,
            ..AttackConfig::default()
        };
        let a = run_attack(&ckpt, &img, &cfg).unwrap();
        let b = run_attack(&ckpt, &img, &cfg).unwrap();
        assert_eq!(a.adversarial, b.adversarial);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn projected_budget_invariant_over_random_configs() {
        let ckpt = tiny_ckpt(Architecture::EncdecMini, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for trial in 0..20 {
            let img = rand_image(100 + trial, 32, 32);
            let cfg = AttackConfig {
                epsilon: rng.gen_range(0.0..24.0),
                alpha: rng.gen_range(0.25..4.0),
                max_iters: rng.gen_range(0..12),
                momentum_decay: rng.gen_range(0.0..1.0),
                variant: [Variant::LB, Variant::FGSM, Variant::IFGSM, Variant::LBTrans, Variant::LBMix]
                    [rng.gen_range(0..5)],
                budget_mode: BudgetMode::Project,
                seed: rng.gen(),
            };
            let res = run_attack(&ckpt, &img, &cfg).unwrap();
            assert!(res.linf_dev <= cfg.epsilon + 1e-12, "trial {trial}");
            assert!(res
                .adversarial
                .data()
                .iter()
                .all(|&v| (0.0..=255.0).contains(&v)));
        }
    }

    #[test]
    fn literal_budget_exceeds_epsilon_by_at_most_alpha() {
        let ckpt = tiny_ckpt(Architecture::HourglassMini, 19);
        let img = rand_image(20, 32, 32);
        let cfg = AttackConfig {
            epsilon: 3.0,
            alpha: 2.0,
            max_iters: 10,
            budget_mode: BudgetMode::Literal,
            ..AttackConfig::default()
        };
        let res = run_attack(&ckpt, &img, &cfg).unwrap();
        assert!(res.linf_dev <= cfg.epsilon + cfg.alpha + 1e-12);
        if res.linf_dev > cfg.epsilon {
            assert_eq!(res.termination, Termination::BudgetExceeded);
        }
    }
}
