//! Gluing caps and neck into one manifold and certifying the result.

pub mod atlas;
pub mod milnor;
pub mod radial;

use crate::error::{IsoflowError, Result};
use crate::ode::OdeOptions;
use crate::profile::SmoothProfile;
use crate::report::CheckEntry;
use crate::stats::{bin_by_level, BinFit};

use atlas::{atlas_checks, level_samples, AtlasBuild, LevelOptions};
use radial::{focal_geodesic_length, radial_checks, radial_samples, RadialBuild};

pub enum Representation {
    /// One warped product over the arclength axis.
    Radial(Box<RadialBuild>),
    /// Cap, neck and cap charts with their identification maps.
    Atlas(Box<AtlasBuild>),
}

/// A glued build together with whatever has been certified about it so far.
pub struct GluedManifoldSpec {
    pub representation: Representation,
    pub f_range: (f64, f64),
    /// Empirical `b(f)` and `a(f)`, filled by [`GluedManifoldSpec::certify`].
    pub certified_b: Option<SmoothProfile>,
    pub certified_a: Option<SmoothProfile>,
    pub seam_reports: Vec<CheckEntry>,
}

/// Resolution knobs of [`GluedManifoldSpec::certify`].
#[derive(Clone, Copy, Debug)]
pub struct CertifyOptions {
    pub radial_resolution: f64,
    pub ode: OdeOptions,
    pub levels: LevelOptions,
    /// False for the uncorrected-neck control.
    pub expect_isoparametric: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            radial_resolution: 1e-3,
            ode: OdeOptions::default(),
            levels: LevelOptions::default(),
            expect_isoparametric: true,
        }
    }
}

impl GluedManifoldSpec {
    pub fn radial(build: RadialBuild) -> Self {
        let f_range = (build.alpha, build.beta);
        Self::wrap(Representation::Radial(Box::new(build)), f_range)
    }

    pub fn atlas(build: AtlasBuild) -> Self {
        let f_range = (build.alpha, build.beta);
        Self::wrap(Representation::Atlas(Box::new(build)), f_range)
    }

    fn wrap(representation: Representation, f_range: (f64, f64)) -> Self {
        GluedManifoldSpec { representation, f_range, certified_b: None, certified_a: None, seam_reports: Vec::new() }
    }

    /// Run every certificate of the representation, record the empirical
    /// `b` and `a` profiles and the seam entries, and return all entries.
    pub fn certify(&mut self, opts: &CertifyOptions) -> Result<Vec<CheckEntry>> {
        let (entries, b, a) = match &self.representation {
            Representation::Radial(build) => {
                let s = radial_samples(build, opts.radial_resolution)?;
                // f is strictly increasing along the arclength axis and each
                // level is one orbit of the rotation group, so the samples
                // are the profiles themselves
                let b = SmoothProfile::tabulated(s.f.clone(), s.b.clone())?;
                let a = SmoothProfile::tabulated(s.f.clone(), s.a.clone())?;
                (radial_checks(build, opts.radial_resolution, &opts.ode)?, b, a)
            }
            Representation::Atlas(build) => {
                let samples = level_samples(build, &opts.levels)?;
                let bins = |sel: fn(&atlas::LevelSample) -> f64| {
                    let pts: Vec<(f64, f64)> = samples.iter().map(|s| (s.f, sel(s))).collect();
                    let binned = bin_by_level(&pts, build.alpha, opts.levels.bins_per_unit, BinFit::Constant);
                    let (xs, ys): (Vec<f64>, Vec<f64>) = binned.bins.iter().map(|b| (b.center, b.mean)).unzip();
                    SmoothProfile::tabulated(xs, ys)
                };
                let b = bins(|s| s.grad_sq)?;
                let a = bins(|s| s.laplacian)?;
                (atlas_checks(build, &opts.levels, opts.expect_isoparametric)?, b, a)
            }
        };
        self.certified_b = Some(b);
        self.certified_a = Some(a);
        self.seam_reports = entries.iter().filter(|e| e.name.contains(".seam.")).cloned().collect();
        Ok(entries)
    }

    /// Focal-to-focal geodesic length (radial representation only).
    pub fn focal_geodesic_length(&self, opts: &OdeOptions) -> Result<f64> {
        match &self.representation {
            Representation::Radial(build) => Ok(focal_geodesic_length(build, opts)?.length),
            Representation::Atlas(_) => {
                Err(IsoflowError::Config("focal geodesic length is certified in the radial representation".into()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warped_disc::{CapOrientation, WarpedDiscSpec};

    #[test]
    fn radial_spec_certifies_profiles() {
        let minus = WarpedDiscSpec::new(3, 1.0, 0.0, CapOrientation::MinCap).unwrap();
        let plus = WarpedDiscSpec::new(3, 1.0, 3.0, CapOrientation::MaxCap).unwrap();
        let mut spec = GluedManifoldSpec::radial(radial::glue_radial(minus, plus, 0.0, 3.0).unwrap());
        let entries = spec.certify(&CertifyOptions::default()).unwrap();
        assert!(entries.iter().all(|e| e.passed()));
        let b = spec.certified_b.as_ref().unwrap();
        assert!(b.eval(0.0).abs() < 1e-10 && b.eval(3.0).abs() < 1e-10);
        assert!((b.eval(1.5) - 1.0).abs() < 1e-8);
        assert_eq!(spec.seam_reports.len(), 4);
    }
}
