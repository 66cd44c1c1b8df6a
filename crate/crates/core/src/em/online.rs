//! Mini-batch online EM over a chunked signal stream.

use std::io::Write;

use nalgebra::DVector;

use super::init::InitSpec;
use super::mstep::{collapsed_components, m_step, Repair};
use super::stats::{batch_stats, sa_update, ComponentStats, SuffStats};
use crate::block::{RowBlock, SignalSource};
use crate::elliptical::MixingFamily;
use crate::error::{Error, Result};
use crate::mixture::HdMedModel;

/// `γ_i = (i + offset)^(−kappa)` for update steps `i = 1, 2, …`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRateSchedule {
    pub kappa: f64,
    pub offset: f64,
}

impl Default for LearningRateSchedule {
    fn default() -> Self {
        Self { kappa: 0.6, offset: 2.0 }
    }
}

impl LearningRateSchedule {
    pub fn new(kappa: f64, offset: f64) -> Result<Self> {
        let s = Self { kappa, offset };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.5 && self.kappa <= 1.0) {
            return Err(Error::InvalidArgument(format!("kappa {} outside (0.5, 1]", self.kappa)));
        }
        // γ_1 < 1 requires 1 + offset > 1
        if !(self.offset > 0.0 && self.offset.is_finite()) {
            return Err(Error::InvalidArgument(format!("schedule offset {} must be positive", self.offset)));
        }
        Ok(())
    }

    pub fn gamma(&self, step: u64) -> f64 {
        (step as f64 + self.offset).powf(-self.kappa)
    }
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub k: usize,
    pub family: MixingFamily,
    pub batch_size: usize,
    pub passes: usize,
    pub schedule: LearningRateSchedule,
    pub init: InitSpec,
    pub seed: u64,
    /// Share of the stream head held out for likelihood monitoring.
    pub heldout_fraction: f64,
    pub heldout_cap: usize,
    /// Re-seed collapsed components instead of failing.
    pub reseed_collapsed: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 1,
            family: MixingFamily::Gaussian,
            batch_size: 2048,
            passes: 1,
            schedule: LearningRateSchedule::default(),
            init: InitSpec::default(),
            seed: 0,
            heldout_fraction: 0.01,
            heldout_cap: 10_000,
            reseed_collapsed: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.passes == 0 {
            return Err(Error::InvalidArgument("at least one pass is required".into()));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::InvalidArgument("held-out fraction must lie in [0, 1)".into()));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub step: u64,
    pub gamma: f64,
    /// Average log-likelihood per held-out row, NaN without a held-out set.
    pub heldout_loglik: f64,
    pub min_mass: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FitReport {
    pub rows: Vec<ReportRow>,
    pub repairs: Vec<(u64, Repair)>,
    pub reseeded: Vec<(u64, usize)>,
    /// Training rows consumed, counted once per pass.
    pub observations: u64,
    pub heldout_rows: usize,
}

impl FitReport {
    /// True when any step needed the eigenvalue floor or lost all variance.
    pub fn degenerate(&self) -> bool {
        self.repairs.iter().any(|(_, r)| matches!(r, Repair::ResidualFloor { .. } | Repair::Degenerate { .. }))
    }

    /// Tab-separated table with a header row.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step\tgamma\theldout_loglik\tmin_component_mass")?;
        for r in &self.rows {
            writeln!(out, "{}\t{:.6e}\t{:.10e}\t{:.6e}", r.step, r.gamma, r.heldout_loglik, r.min_mass)?;
        }
        Ok(())
    }
}

/// Reads up to `n` rows from the source into one block.
fn take_rows(data: &mut dyn SignalSource, n: usize) -> Result<RowBlock> {
    let mut out = RowBlock::with_capacity(data.dim(), n);
    while out.rows() < n {
        match data.next_block(n - out.rows())? {
            Some(b) => out.append(&b)?,
            None => break,
        }
    }
    Ok(out)
}

fn heldout_average(model: &HdMedModel, heldout: &RowBlock) -> Result<f64> {
    if heldout.is_empty() {
        return Ok(f64::NAN);
    }
    let mut src = crate::block::MemorySource::new(heldout);
    Ok(model.log_likelihood(&mut src)? / heldout.rows() as f64)
}

/// Replaces the statistics of collapsed components by the pseudo-statistics
/// of a component centred on the worst-explained observation of `batch`,
/// keeping the old scale, and renormalizes the masses.
fn reseed(stats: &mut SuffStats, model: &HdMedModel, batch: &RowBlock, collapsed: &[usize]) -> Result<()> {
    let mut worst = (f64::INFINITY, 0usize);
    for (i, y) in batch.iter_rows().enumerate() {
        let ld = model.log_density(y)?;
        if ld < worst.0 {
            worst = (ld, i);
        }
    }
    let y = DVector::from_column_slice(batch.row(worst.1));
    let mass = 1.0 / batch.rows() as f64;
    for &k in collapsed {
        let comp = &model.components()[k];
        let second = comp.scale_matrix() + &y * y.transpose();
        let logw = match comp.mixing() {
            MixingFamily::Gaussian => 0.0,
            MixingFamily::Student { nu } => statrs::function::gamma::digamma(nu / 2.0) - (nu / 2.0).ln(),
        };
        stats.components[k] = ComponentStats {
            s0: mass,
            s1: &y * mass,
            s3: second.trace() * mass,
            s2: second * mass,
            s4: mass,
            s5: [mass, logw * mass],
        };
    }
    let total: f64 = stats.masses().iter().sum();
    stats.scale(1.0 / total);
    Ok(())
}

/// Online EM from `init`. The first training mini-batch seeds the running
/// statistics; every later mini-batch is blended in with the scheduled
/// learning rate and followed by an M-step.
pub fn fit_online(
    data: &mut dyn SignalSource,
    cfg: &FitConfig,
    init: HdMedModel,
) -> Result<(HdMedModel, FitReport)> {
    cfg.validate()?;
    if data.dim() != init.dim() {
        return Err(Error::dim(init.dim(), data.dim()));
    }
    if init.n_components() != cfg.k {
        return Err(Error::InvalidArgument(format!(
            "initial model has {} components, configuration asks for {}",
            init.n_components(),
            cfg.k
        )));
    }
    let heldout_n = match data.len_hint() {
        Some(n) => ((n as f64 * cfg.heldout_fraction).ceil() as usize).min(cfg.heldout_cap),
        None => 0,
    };
    let heldout = take_rows(data, heldout_n)?;

    let mut report = FitReport { heldout_rows: heldout.rows(), ..Default::default() };
    let mut model = init;
    let mut stats: Option<SuffStats> = None;
    let mut step = 0u64;
    for pass in 0..cfg.passes {
        if pass > 0 {
            data.rewind()?;
            take_rows(data, heldout.rows())?;
        }
        while let Some(batch) = data.next_block(cfg.batch_size)? {
            if batch.dim() != model.dim() {
                return Err(Error::dim(model.dim(), batch.dim()));
            }
            report.observations += batch.rows() as u64;
            let fresh = batch_stats(&model, &batch)?;
            let Some(prev) = stats.take() else {
                stats = Some(fresh);
                continue;
            };
            step += 1;
            let gamma = cfg.schedule.gamma(step);
            let mut blended = sa_update(&prev, &fresh, gamma)?;
            let collapsed = collapsed_components(&blended);
            if !collapsed.is_empty() {
                if !cfg.reseed_collapsed {
                    let total: f64 = blended.masses().iter().sum();
                    let k = collapsed[0];
                    return Err(Error::Collapse { component: k, mass: blended.components[k].s0 / total });
                }
                reseed(&mut blended, &model, &batch, &collapsed)?;
                report.reseeded.extend(collapsed.iter().map(|&k| (step, k)));
            }
            let out = m_step(&blended, &model)?;
            report.repairs.extend(out.repairs.into_iter().map(|r| (step, r)));
            model = out.model;
            let min_mass = blended.masses().iter().copied().fold(f64::INFINITY, f64::min);
            report.rows.push(ReportRow { step, gamma, heldout_loglik: heldout_average(&model, &heldout)?, min_mass });
            stats = Some(blended);
        }
    }
    if report.observations == 0 {
        return Err(Error::EmptyStream);
    }
    // a stream shorter than two mini-batches never reaches an update
    if step == 0 {
        if let Some(s) = stats {
            let out = m_step(&s, &model)?;
            report.repairs.extend(out.repairs.into_iter().map(|r| (0, r)));
            model = out.model;
        }
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let s = LearningRateSchedule::default();
        assert!((s.gamma(1) - 3f64.powf(-0.6)).abs() < 1e-15);
        assert!(LearningRateSchedule::new(0.5, 2.0).is_err());
        assert!(LearningRateSchedule::new(0.7, 0.0).is_err());
        for i in 1..1000 {
            let g = s.gamma(i);
            assert!(g > 0.0 && g < 1.0);
        }
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(FitConfig { passes: 0, ..Default::default() }.validate().is_err());
        assert!(FitConfig::default().validate().is_ok());
    }
}
