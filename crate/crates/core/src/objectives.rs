//! Loss terms for the three model variants.
//!
//! Generator-side adversarial terms default to the non-saturating form
//! `-log D(fake)`; `GenLossForm::Minimax` gives `log(1 - D(fake))`.
//! Probabilities are clamped to `[1e-7, 1 - 1e-7]` before every log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{BoundNetwork, ModelBundle, Variant};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Cycle weight of the deterministic and stochastic variants.
    pub gamma: f64,
    /// Data reconstruction weight of the augmented variant (also used for
    /// the supervised reconstruction terms).
    pub gamma1: f64,
    /// Latent reconstruction weight of the augmented variant.
    pub gamma2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: 10.0,
            gamma1: 10.0,
            gamma2: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.gamma, self.gamma1, self.gamma2].iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be finite and non-negative".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenLossForm {
    #[default]
    NonSaturating,
    Minimax,
}

fn check_batch(tape: &Tape, v: Var, what: &str) -> Result<()> {
    if tape.shape(v).first().copied().unwrap_or(0) == 0 {
        return Err(Error::Invalid(format!("{what}: empty batch")));
    }
    Ok(())
}

/// `mean log(p)` over clamped probabilities.
fn mean_log(tape: &mut Tape, p: Var) -> Result<Var> {
    let c = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let l = tape.log(c)?;
    Ok(tape.mean(l))
}

/// `mean log(1 - p)` over clamped probabilities.
fn mean_log_complement(tape: &mut Tape, p: Var) -> Result<Var> {
    let c = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let neg = tape.scale(c, -1.0);
    let one = tape.constant(&Tensor::full(tape.shape(p), 1.0));
    let q = tape.add(one, neg)?;
    let l = tape.log(q)?;
    Ok(tape.mean(l))
}

/// Discriminator loss from probabilities on real and fake batches:
/// `-[mean log p_real + mean log(1 - p_fake)]`.
pub fn disc_loss_from_probs(tape: &mut Tape, p_real: Var, p_fake: Var) -> Result<Var> {
    let lr = mean_log(tape, p_real)?;
    let lf = mean_log_complement(tape, p_fake)?;
    let s = tape.add(lr, lf)?;
    Ok(tape.scale(s, -1.0))
}

pub fn gen_loss_from_probs(tape: &mut Tape, p_fake: Var, form: GenLossForm) -> Result<Var> {
    match form {
        GenLossForm::NonSaturating => {
            let l = mean_log(tape, p_fake)?;
            Ok(tape.scale(l, -1.0))
        }
        GenLossForm::Minimax => mean_log_complement(tape, p_fake),
    }
}

/// Discriminator side of the marginal-matching loss. `fake` is detached here,
/// so no gradient reaches whatever produced it.
pub fn gan_disc_loss(tape: &mut Tape, d: &BoundNetwork<'_>, real: Var, fake: Var) -> Result<Var> {
    check_batch(tape, real, "gan_disc_loss real")?;
    check_batch(tape, fake, "gan_disc_loss fake")?;
    let fake = tape.detach(fake);
    let p_real = d.forward(tape, &[real], None)?;
    let p_fake = d.forward(tape, &[fake], None)?;
    disc_loss_from_probs(tape, p_real, p_fake)
}

/// Generator side; gradients flow through `fake`.
pub fn gan_gen_loss(tape: &mut Tape, d: &BoundNetwork<'_>, fake: Var, form: GenLossForm) -> Result<Var> {
    check_batch(tape, fake, "gan_gen_loss")?;
    let p = d.forward(tape, &[fake], None)?;
    gen_loss_from_probs(tape, p, form)
}

/// Mean over the batch of the per-sample L1 norm of `x - recon`.
pub fn cycle_loss_data(tape: &mut Tape, x: Var, recon: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(recon) {
        return Err(Error::Shape {
            op: "cycle loss",
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(recon).to_vec(),
        });
    }
    check_batch(tape, x, "cycle loss")?;
    let cols = tape.shape(x).get(1).copied().unwrap_or(1) as f64;
    let d = tape.sub(recon, x)?;
    let a = tape.abs(d);
    let m = tape.mean(a);
    Ok(tape.scale(m, cols))
}

/// Latent reconstruction, same L1 form as [`cycle_loss_data`].
pub fn cycle_loss_latent(tape: &mut Tape, z: Var, recon: Var) -> Result<Var> {
    cycle_loss_data(tape, z, recon)
}

/// Prior-matching losses for encoded codes: `(discriminator, generator)`.
pub fn latent_gan_losses(
    tape: &mut Tape,
    d_z: &BoundNetwork<'_>,
    prior: Var,
    encoded: Var,
    form: GenLossForm,
) -> Result<(Var, Var)> {
    let width = d_z.net.spec.input_width();
    for v in [prior, encoded] {
        let found = tape.shape(v).get(1).copied().unwrap_or(0);
        if found != width {
            return Err(Error::DimMismatch {
                what: "latent discriminator input width".into(),
                expected: width,
                found,
            });
        }
    }
    let disc = gan_disc_loss(tape, d_z, prior, encoded)?;
    let gen = gan_gen_loss(tape, d_z, encoded, form)?;
    Ok((disc, gen))
}

/// Named generator-side terms of one step.
#[derive(Clone, Copy, Debug, Default)]
pub struct GenTerms {
    pub gan_a: Option<Var>,
    pub gan_b: Option<Var>,
    pub gan_za: Option<Var>,
    pub gan_zb: Option<Var>,
    pub cyc_a: Option<Var>,
    pub cyc_b: Option<Var>,
    pub cyc_za: Option<Var>,
    pub cyc_zb: Option<Var>,
    pub sup_a: Option<Var>,
    pub sup_b: Option<Var>,
    pub sup_gan_za: Option<Var>,
    pub sup_gan_zb: Option<Var>,
}

fn either(x: Option<Var>, y: Option<Var>) -> Option<Var> {
    x.or(y)
}

impl GenTerms {
    pub fn merge(self, o: GenTerms) -> GenTerms {
        GenTerms {
            gan_a: either(self.gan_a, o.gan_a),
            gan_b: either(self.gan_b, o.gan_b),
            gan_za: either(self.gan_za, o.gan_za),
            gan_zb: either(self.gan_zb, o.gan_zb),
            cyc_a: either(self.cyc_a, o.cyc_a),
            cyc_b: either(self.cyc_b, o.cyc_b),
            cyc_za: either(self.cyc_za, o.cyc_za),
            cyc_zb: either(self.cyc_zb, o.cyc_zb),
            sup_a: either(self.sup_a, o.sup_a),
            sup_b: either(self.sup_b, o.sup_b),
            sup_gan_za: either(self.sup_gan_za, o.sup_gan_za),
            sup_gan_zb: either(self.sup_gan_zb, o.sup_gan_zb),
        }
    }

    /// `(term, weight)` pairs of the variant's objective.
    pub fn weighted(&self, weights: &LossWeights, variant: Variant) -> Vec<(Var, f64)> {
        let cyc = match variant {
            Variant::AugCyclegan => weights.gamma1,
            _ => weights.gamma,
        };
        [
            (self.gan_a, 1.0),
            (self.gan_b, 1.0),
            (self.gan_za, 1.0),
            (self.gan_zb, 1.0),
            (self.cyc_a, cyc),
            (self.cyc_b, cyc),
            (self.cyc_za, weights.gamma2),
            (self.cyc_zb, weights.gamma2),
            (self.sup_a, weights.gamma1),
            (self.sup_b, weights.gamma1),
            (self.sup_gan_za, 1.0),
            (self.sup_gan_zb, 1.0),
        ]
        .into_iter()
        .filter_map(|(v, w)| v.map(|v| (v, w)))
        .collect()
    }

    pub fn total(&self, tape: &mut Tape, weights: &LossWeights, variant: Variant) -> Result<Var> {
        weighted_sum(tape, &self.weighted(weights, variant))
    }
}

fn weighted_sum(tape: &mut Tape, terms: &[(Var, f64)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        let s = tape.scale(v, w);
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s)?,
        });
    }
    acc.ok_or_else(|| Error::Invalid("objective has no terms".into()))
}

/// Discriminator-side terms.
#[derive(Clone, Copy, Debug, Default)]
pub struct DiscTerms {
    pub disc_a: Option<Var>,
    pub disc_b: Option<Var>,
    pub disc_za: Option<Var>,
    pub disc_zb: Option<Var>,
    pub sup_disc_za: Option<Var>,
    pub sup_disc_zb: Option<Var>,
}

impl DiscTerms {
    pub fn total(&self, tape: &mut Tape) -> Result<Var> {
        let terms: Vec<(Var, f64)> = [
            self.disc_a,
            self.disc_b,
            self.disc_za,
            self.disc_zb,
            self.sup_disc_za,
            self.sup_disc_zb,
        ]
        .into_iter()
        .flatten()
        .map(|v| (v, 1.0))
        .collect();
        weighted_sum(tape, &terms)
    }
}

/// Scalar telemetry of one training step. Absent terms are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub gan_a: f64,
    pub gan_b: f64,
    pub gan_za: f64,
    pub gan_zb: f64,
    pub cyc_a: f64,
    pub cyc_b: f64,
    pub cyc_za: f64,
    pub cyc_zb: f64,
    pub sup_a: f64,
    pub sup_b: f64,
    pub sup_gan_za: f64,
    pub sup_gan_zb: f64,
    pub disc_a: f64,
    pub disc_b: f64,
    pub disc_za: f64,
    pub disc_zb: f64,
    pub sup_disc_za: f64,
    pub sup_disc_zb: f64,
    pub total_gen: f64,
    pub total_disc: f64,
}

impl LossReport {
    pub const COLUMNS: [&'static str; 20] = [
        "gan_a",
        "gan_b",
        "gan_za",
        "gan_zb",
        "cyc_a",
        "cyc_b",
        "cyc_za",
        "cyc_zb",
        "sup_a",
        "sup_b",
        "sup_gan_za",
        "sup_gan_zb",
        "disc_a",
        "disc_b",
        "disc_za",
        "disc_zb",
        "sup_disc_za",
        "sup_disc_zb",
        "total_gen",
        "total_disc",
    ];

    pub fn values(&self) -> [f64; 20] {
        [
            self.gan_a,
            self.gan_b,
            self.gan_za,
            self.gan_zb,
            self.cyc_a,
            self.cyc_b,
            self.cyc_za,
            self.cyc_zb,
            self.sup_a,
            self.sup_b,
            self.sup_gan_za,
            self.sup_gan_zb,
            self.disc_a,
            self.disc_b,
            self.disc_za,
            self.disc_zb,
            self.sup_disc_za,
            self.sup_disc_zb,
            self.total_gen,
            self.total_disc,
        ]
    }

    pub fn from_values(v: &[f64]) -> Option<Self> {
        if v.len() != 20 {
            return None;
        }
        Some(LossReport {
            gan_a: v[0],
            gan_b: v[1],
            gan_za: v[2],
            gan_zb: v[3],
            cyc_a: v[4],
            cyc_b: v[5],
            cyc_za: v[6],
            cyc_zb: v[7],
            sup_a: v[8],
            sup_b: v[9],
            sup_gan_za: v[10],
            sup_gan_zb: v[11],
            disc_a: v[12],
            disc_b: v[13],
            disc_za: v[14],
            disc_zb: v[15],
            sup_disc_za: v[16],
            sup_disc_zb: v[17],
            total_gen: v[18],
            total_disc: v[19],
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = (&'static str, f64)> {
        Self::COLUMNS.into_iter().zip(self.values())
    }

    pub fn fill_gen(&mut self, tape: &Tape, t: &GenTerms, total: Var) {
        let get = |v: Option<Var>| v.map(|v| tape.scalar(v)).unwrap_or(0.0);
        self.gan_a = get(t.gan_a);
        self.gan_b = get(t.gan_b);
        self.gan_za = get(t.gan_za);
        self.gan_zb = get(t.gan_zb);
        self.cyc_a = get(t.cyc_a);
        self.cyc_b = get(t.cyc_b);
        self.cyc_za = get(t.cyc_za);
        self.cyc_zb = get(t.cyc_zb);
        self.sup_a = get(t.sup_a);
        self.sup_b = get(t.sup_b);
        self.sup_gan_za = get(t.sup_gan_za);
        self.sup_gan_zb = get(t.sup_gan_zb);
        self.total_gen = tape.scalar(total);
    }

    pub fn fill_disc(&mut self, tape: &Tape, t: &DiscTerms, total: Var) {
        let get = |v: Option<Var>| v.map(|v| tape.scalar(v)).unwrap_or(0.0);
        self.disc_a = get(t.disc_a);
        self.disc_b = get(t.disc_b);
        self.disc_za = get(t.disc_za);
        self.disc_zb = get(t.disc_zb);
        self.sup_disc_za = get(t.sup_disc_za);
        self.sup_disc_zb = get(t.sup_disc_zb);
        self.total_disc = tape.scalar(total);
    }

    /// Weighted sum of the generator terms recomputed from the scalars.
    pub fn expected_total_gen(&self, weights: &LossWeights, variant: Variant) -> f64 {
        let cyc = if variant == Variant::AugCyclegan { weights.gamma1 } else { weights.gamma };
        self.gan_a
            + self.gan_b
            + self.gan_za
            + self.gan_zb
            + cyc * (self.cyc_a + self.cyc_b)
            + weights.gamma2 * (self.cyc_za + self.cyc_zb)
            + weights.gamma1 * (self.sup_a + self.sup_b)
            + self.sup_gan_za
            + self.sup_gan_zb
    }

    pub fn expected_total_disc(&self) -> f64 {
        self.disc_a + self.disc_b + self.disc_za + self.disc_zb + self.sup_disc_za + self.sup_disc_zb
    }

    /// First non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.entries().find(|(_, v)| !v.is_finite()).map(|(k, _)| k)
    }
}

/// A bundle's networks recorded on one tape. Either group may be frozen.
pub struct BoundBundle<'a> {
    pub variant: Variant,
    pub f_ab: BoundNetwork<'a>,
    pub g_ba: BoundNetwork<'a>,
    pub e_a: Option<BoundNetwork<'a>>,
    pub e_b: Option<BoundNetwork<'a>>,
    pub d_a: BoundNetwork<'a>,
    pub d_b: BoundNetwork<'a>,
    pub d_za: Option<BoundNetwork<'a>>,
    pub d_zb: Option<BoundNetwork<'a>>,
}

impl<'a> BoundBundle<'a> {
    pub fn new(tape: &mut Tape, m: &'a ModelBundle, track_generators: bool, track_discriminators: bool) -> Self {
        let bind = |tape: &mut Tape, n: &'a crate::networks::Network, track: bool| {
            if track {
                n.bind(tape)
            } else {
                n.bind_frozen(tape)
            }
        };
        BoundBundle {
            variant: m.variant,
            f_ab: bind(tape, &m.f_ab, track_generators),
            g_ba: bind(tape, &m.g_ba, track_generators),
            e_a: m.e_a.as_ref().map(|n| bind(tape, n, track_generators)),
            e_b: m.e_b.as_ref().map(|n| bind(tape, n, track_generators)),
            d_a: bind(tape, &m.d_a, track_discriminators),
            d_b: bind(tape, &m.d_b, track_discriminators),
            d_za: m.d_za.as_ref().map(|n| bind(tape, n, track_discriminators)),
            d_zb: m.d_zb.as_ref().map(|n| bind(tape, n, track_discriminators)),
        }
    }

    pub fn role(&self, role: &str) -> Option<&BoundNetwork<'a>> {
        match role {
            "f_ab" => Some(&self.f_ab),
            "g_ba" => Some(&self.g_ba),
            "e_a" => self.e_a.as_ref(),
            "e_b" => self.e_b.as_ref(),
            "d_a" => Some(&self.d_a),
            "d_b" => Some(&self.d_b),
            "d_za" => self.d_za.as_ref(),
            "d_zb" => self.d_zb.as_ref(),
            _ => None,
        }
    }

    /// Gradients of the given roles under `role/name` keys, matching
    /// [`ModelBundle::collect_params`].
    pub fn gradients(&self, roles: &[&str], tape: &Tape, grads: &Gradients) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for &r in roles {
            if let Some(n) = self.role(r) {
                for (name, g) in n.params.gradients(tape, grads) {
                    out.insert(format!("{r}/{name}"), g);
                }
            }
        }
        out
    }

    fn aug_parts(&self) -> Result<(&BoundNetwork<'a>, &BoundNetwork<'a>, &BoundNetwork<'a>, &BoundNetwork<'a>)> {
        match (&self.e_a, &self.e_b, &self.d_za, &self.d_zb) {
            (Some(ea), Some(eb), Some(dza), Some(dzb)) => Ok((ea, eb, dza, dzb)),
            _ => Err(Error::Invalid("augmented objective requires encoders and latent discriminators".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Starts from `(a, z_b)`.
    AtoB,
    /// Starts from `(b, z_a)`.
    BtoA,
}

/// Forward pass of one augmented cycle, in generation order:
/// `b~ = F(a, z_b)`, `z~_a = E_A(a, b~)`, `a' = G(b~, z~_a)`, `z_b' = E_B(a, b~)`
/// (mirrored for `BtoA`). Encoders always take `(a-side, b-side)`.
pub struct AugCycle {
    pub generated: Var,
    pub encoded: Var,
    pub source_recon: Var,
    pub latent_recon: Var,
}

pub fn aug_cycle(tape: &mut Tape, nets: &BoundBundle<'_>, dir: Direction, source: Var, z: Var) -> Result<AugCycle> {
    let (ea, eb, _, _) = nets.aug_parts()?;
    Ok(match dir {
        Direction::AtoB => {
            let b_gen = nets.f_ab.forward(tape, &[source], Some(z))?;
            let za = ea.forward(tape, &[source, b_gen], None)?;
            let a_rec = nets.g_ba.forward(tape, &[b_gen], Some(za))?;
            let zb_rec = eb.forward(tape, &[source, b_gen], None)?;
            AugCycle {
                generated: b_gen,
                encoded: za,
                source_recon: a_rec,
                latent_recon: zb_rec,
            }
        }
        Direction::BtoA => {
            let a_gen = nets.g_ba.forward(tape, &[source], Some(z))?;
            let zb = eb.forward(tape, &[a_gen, source], None)?;
            let b_rec = nets.f_ab.forward(tape, &[a_gen], Some(zb))?;
            let za_rec = ea.forward(tape, &[a_gen, source], None)?;
            AugCycle {
                generated: a_gen,
                encoded: zb,
                source_recon: b_rec,
                latent_recon: za_rec,
            }
        }
    })
}

/// Generator-side objective of one augmented direction and its weighted
/// total: `GAN_B + GAN_Za + γ1·CYC_A + γ2·CYC_Zb` for `AtoB`.
pub fn aug_direction_objective(
    tape: &mut Tape,
    nets: &BoundBundle<'_>,
    dir: Direction,
    source: Var,
    z: Var,
    weights: &LossWeights,
    form: GenLossForm,
) -> Result<(GenTerms, Var)> {
    if nets.variant != Variant::AugCyclegan {
        return Err(Error::Invalid("aug_direction_objective requires the aug-cyclegan variant".into()));
    }
    let (_, _, dza, dzb) = nets.aug_parts()?;
    let c = aug_cycle(tape, nets, dir, source, z)?;
    let cyc_data = cycle_loss_data(tape, source, c.source_recon)?;
    let cyc_latent = cycle_loss_latent(tape, z, c.latent_recon)?;
    let terms = match dir {
        Direction::AtoB => GenTerms {
            gan_b: Some(gan_gen_loss(tape, &nets.d_b, c.generated, form)?),
            gan_za: Some(gan_gen_loss(tape, dza, c.encoded, form)?),
            cyc_a: Some(cyc_data),
            cyc_zb: Some(cyc_latent),
            ..GenTerms::default()
        },
        Direction::BtoA => GenTerms {
            gan_a: Some(gan_gen_loss(tape, &nets.d_a, c.generated, form)?),
            gan_zb: Some(gan_gen_loss(tape, dzb, c.encoded, form)?),
            cyc_b: Some(cyc_data),
            cyc_za: Some(cyc_latent),
            ..GenTerms::default()
        },
    };
    let total = terms.total(tape, weights, Variant::AugCyclegan)?;
    Ok((terms, total))
}

/// Supervised reconstruction on true pairs plus the prior-matching
/// regularizer on codes inferred from them:
/// `sup_a = ||G(b, E_A(a, b)) - a||_1`, `sup_b = ||F(a, E_B(a, b)) - b||_1`.
/// Returns generator terms and the discriminator terms of the regularizer.
pub fn supervised_losses(
    tape: &mut Tape,
    nets: &BoundBundle<'_>,
    a: Var,
    b: Var,
    prior_za: Var,
    prior_zb: Var,
    form: GenLossForm,
) -> Result<(GenTerms, DiscTerms)> {
    if nets.variant != Variant::AugCyclegan {
        return Err(Error::Invalid("supervised losses require the aug-cyclegan variant".into()));
    }
    let (ea, eb, dza, dzb) = nets.aug_parts()?;
    let za = ea.forward(tape, &[a, b], None)?;
    let zb = eb.forward(tape, &[a, b], None)?;
    let a_hat = nets.g_ba.forward(tape, &[b], Some(za))?;
    let b_hat = nets.f_ab.forward(tape, &[a], Some(zb))?;
    let sup_a = cycle_loss_data(tape, a, a_hat)?;
    let sup_b = cycle_loss_data(tape, b, b_hat)?;
    let (dz_a, gz_a) = latent_gan_losses(tape, dza, prior_za, za, form)?;
    let (dz_b, gz_b) = latent_gan_losses(tape, dzb, prior_zb, zb, form)?;
    Ok((
        GenTerms {
            sup_a: Some(sup_a),
            sup_b: Some(sup_b),
            sup_gan_za: Some(gz_a),
            sup_gan_zb: Some(gz_b),
            ..GenTerms::default()
        },
        DiscTerms {
            sup_disc_za: Some(dz_a),
            sup_disc_zb: Some(dz_b),
            ..DiscTerms::default()
        },
    ))
}

/// Concrete inputs of one step. Latent draws are present as the variant
/// requires: `z_b`/`z_a` feed `F`/`G` on the first hop of each cycle;
/// `z_a_cycle`/`z_b_cycle` are the second-hop draws of the stochastic
/// variant; `prior_za`/`prior_zb` are the real samples for latent
/// discriminators.
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub a: Tensor,
    pub b: Tensor,
    pub z_a: Option<Tensor>,
    pub z_b: Option<Tensor>,
    pub z_a_cycle: Option<Tensor>,
    pub z_b_cycle: Option<Tensor>,
    pub prior_za: Option<Tensor>,
    pub prior_zb: Option<Tensor>,
    pub paired: Option<(Tensor, Tensor)>,
}

fn need<'t>(t: &'t Option<Tensor>, what: &str) -> Result<&'t Tensor> {
    t.as_ref().ok_or_else(|| Error::Invalid(format!("step batch is missing `{what}`")))
}

struct Fakes {
    b_gen: Var,
    a_gen: Var,
    za_enc: Option<Var>,
    zb_enc: Option<Var>,
}

/// Generator-side objective for the bundle's variant, summed over both
/// directions (and the supervised terms when a paired batch is present).
pub fn generator_objective(
    tape: &mut Tape,
    nets: &BoundBundle<'_>,
    batch: &StepBatch,
    weights: &LossWeights,
    form: GenLossForm,
) -> Result<(GenTerms, Var)> {
    let a = tape.constant(&batch.a);
    let b = tape.constant(&batch.b);
    let terms = match nets.variant {
        Variant::Cyclegan => {
            let b_gen = nets.f_ab.forward(tape, &[a], None)?;
            let a_rec = nets.g_ba.forward(tape, &[b_gen], None)?;
            let a_gen = nets.g_ba.forward(tape, &[b], None)?;
            let b_rec = nets.f_ab.forward(tape, &[a_gen], None)?;
            GenTerms {
                gan_b: Some(gan_gen_loss(tape, &nets.d_b, b_gen, form)?),
                gan_a: Some(gan_gen_loss(tape, &nets.d_a, a_gen, form)?),
                cyc_a: Some(cycle_loss_data(tape, a, a_rec)?),
                cyc_b: Some(cycle_loss_data(tape, b, b_rec)?),
                ..GenTerms::default()
            }
        }
        Variant::StochCyclegan => {
            let z1 = tape.constant(need(&batch.z_b, "z_b")?);
            let z2 = tape.constant(need(&batch.z_a_cycle, "z_a_cycle")?);
            let z3 = tape.constant(need(&batch.z_a, "z_a")?);
            let z4 = tape.constant(need(&batch.z_b_cycle, "z_b_cycle")?);
            let b_gen = nets.f_ab.forward(tape, &[a], Some(z1))?;
            let a_rec = nets.g_ba.forward(tape, &[b_gen], Some(z2))?;
            let a_gen = nets.g_ba.forward(tape, &[b], Some(z3))?;
            let b_rec = nets.f_ab.forward(tape, &[a_gen], Some(z4))?;
            GenTerms {
                gan_b: Some(gan_gen_loss(tape, &nets.d_b, b_gen, form)?),
                gan_a: Some(gan_gen_loss(tape, &nets.d_a, a_gen, form)?),
                cyc_a: Some(cycle_loss_data(tape, a, a_rec)?),
                cyc_b: Some(cycle_loss_data(tape, b, b_rec)?),
                ..GenTerms::default()
            }
        }
        Variant::AugCyclegan => {
            let zb = tape.constant(need(&batch.z_b, "z_b")?);
            let za = tape.constant(need(&batch.z_a, "z_a")?);
            let (t_ab, _) = aug_direction_objective(tape, nets, Direction::AtoB, a, zb, weights, form)?;
            let (t_ba, _) = aug_direction_objective(tape, nets, Direction::BtoA, b, za, weights, form)?;
            let mut t = t_ab.merge(t_ba);
            if let Some((pa, pb)) = &batch.paired {
                let pa = tape.constant(pa);
                let pb = tape.constant(pb);
                let pza = tape.constant(need(&batch.prior_za, "prior_za")?);
                let pzb = tape.constant(need(&batch.prior_zb, "prior_zb")?);
                let (sup, _) = supervised_losses(tape, nets, pa, pb, pza, pzb, form)?;
                t = t.merge(sup);
            }
            t
        }
    };
    let total = terms.total(tape, weights, nets.variant)?;
    Ok((terms, total))
}

fn fakes(tape: &mut Tape, nets: &BoundBundle<'_>, batch: &StepBatch, a: Var, b: Var) -> Result<Fakes> {
    Ok(match nets.variant {
        Variant::Cyclegan => Fakes {
            b_gen: nets.f_ab.forward(tape, &[a], None)?,
            a_gen: nets.g_ba.forward(tape, &[b], None)?,
            za_enc: None,
            zb_enc: None,
        },
        Variant::StochCyclegan => {
            let zb = tape.constant(need(&batch.z_b, "z_b")?);
            let za = tape.constant(need(&batch.z_a, "z_a")?);
            Fakes {
                b_gen: nets.f_ab.forward(tape, &[a], Some(zb))?,
                a_gen: nets.g_ba.forward(tape, &[b], Some(za))?,
                za_enc: None,
                zb_enc: None,
            }
        }
        Variant::AugCyclegan => {
            let (ea, eb, _, _) = nets.aug_parts()?;
            let zb = tape.constant(need(&batch.z_b, "z_b")?);
            let za = tape.constant(need(&batch.z_a, "z_a")?);
            let b_gen = nets.f_ab.forward(tape, &[a], Some(zb))?;
            let a_gen = nets.g_ba.forward(tape, &[b], Some(za))?;
            Fakes {
                b_gen,
                a_gen,
                za_enc: Some(ea.forward(tape, &[a, b_gen], None)?),
                zb_enc: Some(eb.forward(tape, &[a_gen, b], None)?),
            }
        }
    })
}

/// Discriminator objective on detached fakes, for every discriminator.
pub fn discriminator_objective(tape: &mut Tape, nets: &BoundBundle<'_>, batch: &StepBatch) -> Result<(DiscTerms, Var)> {
    let a = tape.constant(&batch.a);
    let b = tape.constant(&batch.b);
    let f = fakes(tape, nets, batch, a, b)?;
    let mut terms = DiscTerms {
        disc_a: Some(gan_disc_loss(tape, &nets.d_a, a, f.a_gen)?),
        disc_b: Some(gan_disc_loss(tape, &nets.d_b, b, f.b_gen)?),
        ..DiscTerms::default()
    };
    if nets.variant == Variant::AugCyclegan {
        let (_, _, dza, dzb) = nets.aug_parts()?;
        let pza = tape.constant(need(&batch.prior_za, "prior_za")?);
        let pzb = tape.constant(need(&batch.prior_zb, "prior_zb")?);
        terms.disc_za = Some(gan_disc_loss(tape, dza, pza, f.za_enc.expect("aug fakes"))?);
        terms.disc_zb = Some(gan_disc_loss(tape, dzb, pzb, f.zb_enc.expect("aug fakes"))?);
        if let Some((pa, pb)) = &batch.paired {
            let pa = tape.constant(pa);
            let pb = tape.constant(pb);
            let (ea, eb, _, _) = nets.aug_parts()?;
            let za = ea.forward(tape, &[pa, pb], None)?;
            let zb = eb.forward(tape, &[pa, pb], None)?;
            terms.sup_disc_za = Some(gan_disc_loss(tape, dza, pza, za)?);
            terms.sup_disc_zb = Some(gan_disc_loss(tape, dzb, pzb, zb)?);
        }
    }
    let total = terms.total(tape)?;
    Ok((terms, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{ArchConfig, ModelDims};
    use crate::rng::{sample_gaussian, Rng};

    const LN2: f64 = std::f64::consts::LN_2;

    fn dims() -> ModelDims {
        ModelDims {
            dim_a: 3,
            dim_b: 5,
            dim_za: 2,
            dim_zb: 2,
        }
    }

    fn small_arch() -> ArchConfig {
        ArchConfig {
            gen_hidden: vec![8, 8],
            enc_hidden: vec![8],
            disc_hidden: vec![8],
            latent_disc_hidden: vec![8],
            ..ArchConfig::default()
        }
    }

    fn bundle(variant: Variant, seed: u64) -> ModelBundle {
        ModelBundle::build(variant, dims(), &small_arch(), &mut Rng::new(seed)).unwrap()
    }

    fn batch(seed: u64, n: usize, paired: bool) -> StepBatch {
        let mut rng = Rng::new(seed).split(1);
        let d = dims();
        let g = |rng: &mut Rng, w: usize| sample_gaussian(rng, &[n, w]);
        let t = |rng: &mut Rng, w: usize| {
            let mut x = g(rng, w);
            x.data_mut().iter_mut().for_each(|v| *v = v.tanh());
            x
        };
        StepBatch {
            a: t(&mut rng, d.dim_a),
            b: t(&mut rng, d.dim_b),
            z_a: Some(g(&mut rng, d.dim_za)),
            z_b: Some(g(&mut rng, d.dim_zb)),
            z_a_cycle: Some(g(&mut rng, d.dim_za)),
            z_b_cycle: Some(g(&mut rng, d.dim_zb)),
            prior_za: Some(g(&mut rng, d.dim_za)),
            prior_zb: Some(g(&mut rng, d.dim_zb)),
            paired: paired.then(|| (t(&mut rng, d.dim_a), t(&mut rng, d.dim_b))),
        }
    }

    /// Makes a discriminator output exactly 0.5 everywhere.
    fn blind(net: &mut crate::networks::Network) {
        let w = net.params.get("out.w").unwrap().shape().to_vec();
        net.params.assign("out.w", Tensor::zeros(&w)).unwrap();
    }

    fn gen_report(m: &ModelBundle, b: &StepBatch, w: &LossWeights, form: GenLossForm) -> (LossReport, f64) {
        let mut tape = Tape::new();
        let nets = BoundBundle::new(&mut tape, m, true, false);
        let (terms, total) = generator_objective(&mut tape, &nets, b, w, form).unwrap();
        let mut r = LossReport::default();
        r.fill_gen(&tape, &terms, total);
        (r, tape.scalar(total))
    }

    #[test]
    fn half_probability_identities() {
        let mut m = bundle(Variant::AugCyclegan, 1);
        for role in DISC {
            blind(m.network_mut(role).unwrap());
        }
        let b = batch(2, 6, false);
        let mut tape = Tape::new();
        let nets = BoundBundle::new(&mut tape, &m, false, true);
        let (terms, _) = discriminator_objective(&mut tape, &nets, &b).unwrap();
        for v in [terms.disc_a, terms.disc_b, terms.disc_za, terms.disc_zb] {
            assert!((tape.scalar(v.unwrap()) - 2.0 * LN2).abs() < 1e-12);
        }
        let (r, _) = gen_report(&m, &b, &LossWeights::default(), GenLossForm::NonSaturating);
        for v in [r.gan_a, r.gan_b, r.gan_za, r.gan_zb] {
            assert!((v - LN2).abs() < 1e-12);
        }
        let (r, _) = gen_report(&m, &b, &LossWeights::default(), GenLossForm::Minimax);
        assert!((r.gan_b + LN2).abs() < 1e-12);
    }

    const DISC: [&str; 4] = ["d_a", "d_b", "d_za", "d_zb"];

    #[test]
    fn cycle_loss_matches_rowwise_l1() {
        let x = Tensor::new(vec![2, 3], vec![0.0, 1.0, -1.0, 0.5, 0.5, 0.5]).unwrap();
        let y = Tensor::new(vec![2, 3], vec![0.5, 1.0, 0.0, 0.5, -0.5, 0.25]).unwrap();
        // rows: 0.5 + 0 + 1 = 1.5 and 0 + 1 + 0.25 = 1.25
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let yv = tape.constant(&y);
        let l = cycle_loss_data(&mut tape, xv, yv).unwrap();
        assert!((tape.scalar(l) - 1.375).abs() < 1e-15);
        let bad = tape.constant(&Tensor::zeros(&[2, 2]));
        assert!(cycle_loss_latent(&mut tape, xv, bad).is_err());
    }

    #[test]
    fn clamped_probabilities_stay_finite() {
        let mut tape = Tape::new();
        let one = tape.constant(&Tensor::full(&[4, 1], 1.0));
        let zero = tape.constant(&Tensor::full(&[4, 1], 0.0));
        let d = disc_loss_from_probs(&mut tape, zero, one).unwrap();
        let g = gen_loss_from_probs(&mut tape, zero, GenLossForm::NonSaturating).unwrap();
        let want = -(PROB_CLAMP.ln() + (PROB_CLAMP).ln());
        assert!((tape.scalar(d) - want).abs() < 1e-6);
        assert!((tape.scalar(g) + PROB_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn totals_are_declared_weighted_sums() {
        let w = LossWeights {
            gamma: 3.0,
            gamma1: 7.0,
            gamma2: 0.5,
        };
        for (variant, paired) in [
            (Variant::Cyclegan, false),
            (Variant::StochCyclegan, false),
            (Variant::AugCyclegan, false),
            (Variant::AugCyclegan, true),
        ] {
            let m = bundle(variant, 4);
            let (r, total) = gen_report(&m, &batch(5, 7, paired), &w, GenLossForm::NonSaturating);
            assert!((r.expected_total_gen(&w, variant) - total).abs() < 1e-12);
            if variant == Variant::Cyclegan {
                let explicit = r.gan_a + r.gan_b + w.gamma * (r.cyc_a + r.cyc_b);
                assert!((explicit - total).abs() < 1e-12);
                assert_eq!(r.cyc_za, 0.0);
            }
            if paired {
                assert!(r.sup_a > 0.0 && r.sup_b > 0.0);
            }
        }
    }

    #[test]
    fn total_is_linear_in_cycle_weights() {
        let m = bundle(Variant::AugCyclegan, 6);
        let b = batch(7, 5, false);
        let base = LossWeights {
            gamma: 10.0,
            gamma1: 2.0,
            gamma2: 3.0,
        };
        let (r, t0) = gen_report(&m, &b, &base, GenLossForm::NonSaturating);
        let dbl = LossWeights {
            gamma1: 4.0,
            gamma2: 6.0,
            ..base
        };
        let (_, t1) = gen_report(&m, &b, &dbl, GenLossForm::NonSaturating);
        let cyc = 2.0 * (r.cyc_a + r.cyc_b) + 3.0 * (r.cyc_za + r.cyc_zb);
        assert!((t1 - t0 - cyc).abs() < 1e-12);

        let zero = LossWeights {
            gamma1: 0.0,
            gamma2: 0.0,
            ..base
        };
        let (r, t) = gen_report(&m, &b, &zero, GenLossForm::NonSaturating);
        assert!((t - (r.gan_a + r.gan_b + r.gan_za + r.gan_zb)).abs() < 1e-12);
    }

    #[test]
    fn direction_objective_sums_its_terms() {
        let m = bundle(Variant::AugCyclegan, 8);
        let b = batch(9, 4, false);
        let w = LossWeights::default();
        let mut tape = Tape::new();
        let nets = BoundBundle::new(&mut tape, &m, true, false);
        let a = tape.constant(&b.a);
        let z = tape.constant(b.z_b.as_ref().unwrap());
        let (t, total) =
            aug_direction_objective(&mut tape, &nets, Direction::AtoB, a, z, &w, GenLossForm::NonSaturating).unwrap();
        let s = |v: Option<Var>| tape.scalar(v.unwrap());
        let want = s(t.gan_b) + s(t.gan_za) + w.gamma1 * s(t.cyc_a) + w.gamma2 * s(t.cyc_zb);
        assert!((tape.scalar(total) - want).abs() < 1e-12);
        assert!(t.gan_a.is_none() && t.cyc_b.is_none());
    }

    #[test]
    fn disc_loss_does_not_reach_generators() {
        let m = bundle(Variant::AugCyclegan, 10);
        let b = batch(11, 4, true);
        let mut tape = Tape::new();
        let nets = BoundBundle::new(&mut tape, &m, true, true);
        let (_, total) = discriminator_objective(&mut tape, &nets, &b).unwrap();
        let grads = tape.backward(total).unwrap();
        for g in [&nets.f_ab, &nets.g_ba, nets.e_a.as_ref().unwrap()] {
            let gs = g.params.gradients(&tape, &grads);
            assert!(gs.values().all(|t| t.data().iter().all(|v| *v == 0.0)));
        }
        let gs = nets.d_za.as_ref().unwrap().params.gradients(&tape, &grads);
        assert!(gs.values().any(|t| t.data().iter().any(|v| *v != 0.0)));
    }

    #[test]
    fn missing_latents_are_reported() {
        let m = bundle(Variant::StochCyclegan, 12);
        let mut b = batch(13, 4, false);
        b.z_a_cycle = None;
        let mut tape = Tape::new();
        let nets = BoundBundle::new(&mut tape, &m, true, false);
        let err = generator_objective(&mut tape, &nets, &b, &LossWeights::default(), GenLossForm::NonSaturating)
            .unwrap_err();
        assert!(err.to_string().contains("z_a_cycle"));
    }

    #[test]
    fn report_round_trips_and_flags_nan() {
        let mut r = LossReport {
            cyc_zb: 1.5,
            ..LossReport::default()
        };
        assert_eq!(LossReport::from_values(&r.values()), Some(r));
        assert_eq!(r.first_non_finite(), None);
        r.disc_za = f64::NAN;
        assert_eq!(r.first_non_finite(), Some("disc_za"));
    }
}
