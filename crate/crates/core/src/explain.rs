//! Band-provenance R² study and discriminant projections of trained models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capsule::FeatureSource;
use crate::error::{Error, Result};
use crate::eval::{cda_project, r2_by_component, CdaProjection};
use crate::model::{Ffcdnn, FfcdnnOutput, Network, PreparedSample, StressClass};
use crate::synth::ClassSignature;
use crate::vi::Channel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentR2 {
    /// Index into the flattened primary capsules.
    pub component: usize,
    pub branch: usize,
    pub pixel: usize,
    /// Inclusive DFT bin range of the pooling band.
    pub bins: (usize, usize),
    pub r2: f64,
    pub in_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandR2 {
    pub class: StressClass,
    pub samples: usize,
    pub components: Vec<ComponentR2>,
    pub mean_in_band: f64,
    pub mean_out_of_band: f64,
}

impl BandR2 {
    pub fn gap(&self) -> f64 {
        self.mean_in_band - self.mean_out_of_band
    }
}

/// Inference-mode intermediates for every sample, in order.
pub fn encode_all(net: &Ffcdnn, samples: &[PreparedSample]) -> Result<Vec<FfcdnnOutput>> {
    samples.par_iter().map(|s| net.encode(s)).collect()
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// R² between each primary-capsule component and severity over the samples
/// of `class` together with the Healthy samples, which anchor the low end of
/// the severity scale. A component is in band when its pooling band overlaps the
/// class signature band of its branch's channel.
pub fn band_r2(
    net: &Ffcdnn,
    outputs: &[FfcdnnOutput],
    labels: &[StressClass],
    severity: &[f64],
    class: StressClass,
) -> Result<BandR2> {
    if outputs.len() != labels.len() || labels.len() != severity.len() {
        return Err(Error::dim("outputs, labels and severity differ in length"));
    }
    if class == StressClass::Healthy {
        return Err(Error::invalid("healthy samples carry no stress band"));
    }
    let config = net.config();
    let sig = ClassSignature::of(class, config);
    let pool = config.pool()?;
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class || labels[i] == StressClass::Healthy).collect();
    let sources = net.layout().sources();
    let comps: Vec<(usize, FeatureSource)> = sources
        .iter()
        .enumerate()
        .filter_map(|(c, s)| s.map(|s| (c, s)))
        .collect();
    let features: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| comps.iter().map(|&(c, _)| outputs[i].primary.values[c]).collect())
        .collect();
    let sev: Vec<f64> = idx.iter().map(|&i| severity[i]).collect();
    let r2 = r2_by_component(&features, &sev)?;
    let components: Vec<ComponentR2> = comps
        .iter()
        .zip(&r2)
        .map(|(&(c, s), &r)| {
            let bins = pool.bands()[s.band];
            let ch = if s.branch == 0 { Channel::Lai } else { Channel::Lcc };
            ComponentR2 {
                component: c,
                branch: s.branch,
                pixel: s.pixel,
                bins,
                r2: r,
                in_band: sig.band(ch).is_some_and(|b| overlaps(bins, b)),
            }
        })
        .collect();
    let mean = |inside: bool| {
        let v: Vec<f64> = components.iter().filter(|c| c.in_band == inside).map(|c| c.r2).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(BandR2 {
        class,
        samples: idx.len(),
        mean_in_band: mean(true),
        mean_out_of_band: mean(false),
        components,
    })
}

/// Discriminant projection of any network's learned representation.
pub fn cda(net: &dyn Network, samples: &[PreparedSample]) -> Result<CdaProjection> {
    let reps: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| net.representation(s))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    cda_project(&reps, &labels, 2)
}
