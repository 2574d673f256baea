use serde::{Deserialize, Serialize};

use super::{init_xavier, Architecture, Parameters, Provenance};
use crate::{Error, Result};

/// Which phase-1 layers are carried into the phase-2 network.
///
/// The first `smart_hidden_layers` hidden layers (their incoming weights and
/// biases) are copied from phase 1. `inserted_random_layers` freshly
/// initialized hidden layers follow them, then the output layer, which is
/// copied from phase 1 when `output_layer_smart` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraftPlan {
    pub smart_hidden_layers: usize,
    pub output_layer_smart: bool,
    pub inserted_random_layers: usize,
}

impl GraftPlan {
    /// 4 smart hidden layers, 4 inserted, smart output.
    pub fn cylinder() -> Self {
        GraftPlan {
            smart_hidden_layers: 4,
            output_layer_smart: true,
            inserted_random_layers: 4,
        }
    }

    /// 2 smart hidden layers, 2 inserted, smart output.
    pub fn burgers() -> Self {
        GraftPlan {
            smart_hidden_layers: 2,
            output_layer_smart: true,
            inserted_random_layers: 2,
        }
    }

    /// Hidden-layer indices taken from phase 1.
    pub fn smart_layer_indices(&self) -> Vec<usize> {
        (0..self.smart_hidden_layers).collect()
    }

    /// Layer indices (in the grafted network) of the inserted random layers.
    pub fn inserted_layer_indices(&self) -> Vec<usize> {
        (self.smart_hidden_layers..self.smart_hidden_layers + self.inserted_random_layers).collect()
    }

    /// Architecture of the grafted network built on top of `phase1`.
    pub fn target_architecture(&self, phase1: &Architecture) -> Result<Architecture> {
        let hidden = &phase1.hidden_widths;
        if self.smart_hidden_layers > hidden.len() {
            return Err(Error::GraftMismatch(format!(
                "plan takes {} hidden layers but phase 1 has {}",
                self.smart_hidden_layers,
                hidden.len()
            )));
        }
        let Some(&width) = hidden.last() else {
            return Err(Error::GraftMismatch("phase-1 network has no hidden layers".into()));
        };
        if self.smart_hidden_layers > 0 && hidden[self.smart_hidden_layers - 1] != width {
            return Err(Error::GraftMismatch(format!(
                "smart prefix ends at width {} but the insertion point expects {}",
                hidden[self.smart_hidden_layers - 1],
                width
            )));
        }
        if self.smart_hidden_layers == 0 && self.inserted_random_layers == 0 {
            return Err(Error::GraftMismatch("plan keeps no hidden layers".into()));
        }
        let mut widths = hidden[..self.smart_hidden_layers].to_vec();
        widths.extend(std::iter::repeat_n(width, self.inserted_random_layers));
        Ok(Architecture {
            n_inputs: phase1.n_inputs,
            hidden_widths: widths,
            n_outputs: phase1.n_outputs,
            activation: phase1.activation,
        })
    }
}

/// Build the phase-2 network from phase-1 weights.
///
/// Layers not copied from phase 1 are taken from `init_xavier(target, seed)`,
/// so a vanilla network initialized with the same seed shares them exactly.
pub fn graft_smart_weights(
    phase1: &Parameters,
    phase1_arch: &Architecture,
    plan: &GraftPlan,
    seed: u64,
) -> Result<(Parameters, Architecture)> {
    phase1.check(phase1_arch)?;
    let target = plan.target_architecture(phase1_arch)?;
    let layout = Parameters::zeros(&target, Provenance::Xavier);
    let mut values = init_xavier(&target, seed).into_values();
    let mut tags = vec![Provenance::Xavier; target.n_layers()];

    let copy_layer = |values: &mut Vec<f64>, src: usize, dst: usize| {
        values[layout.layer_range(dst)].copy_from_slice(phase1.layer(src));
    };
    for l in 0..plan.smart_hidden_layers {
        copy_layer(&mut values, l, l);
        tags[l] = Provenance::Smart;
    }
    if plan.output_layer_smart {
        let dst = target.n_layers() - 1;
        copy_layer(&mut values, phase1_arch.n_layers() - 1, dst);
        tags[dst] = Provenance::Smart;
    }
    Ok((Parameters::from_parts(&target, values, tags)?, target))
}
