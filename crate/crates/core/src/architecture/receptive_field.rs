//! Theoretical receptive field along the serial conv path.
//!
//! For each conv on the main path, `rf += (k - 1) * jump` and then
//! `jump *= stride`. Skip projections are 1x1x1 and do not widen the field.

use serde::Serialize;

use super::config::BagNetConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RfLayer {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
    pub rf: usize,
    pub jump: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReceptiveField {
    pub layers: Vec<RfLayer>,
    /// Edge of the isotropic receptive-field cube, in voxels.
    pub rf: usize,
    /// Input-voxel spacing between neighbouring output locations.
    pub jump: usize,
}

pub fn compute_receptive_field(config: &BagNetConfig) -> ReceptiveField {
    let mut rf = 1;
    let mut jump = 1;
    let mut layers = Vec::new();
    let mut push = |name: String, kernel: usize, stride: usize| {
        rf += (kernel - 1) * jump;
        jump *= stride;
        layers.push(RfLayer {
            name,
            kernel,
            stride,
            rf,
            jump,
        });
    };
    push("stem.conv_a".into(), 1, 1);
    push("stem.conv_b".into(), config.stem_kernel, 1);
    for (s, row) in config.kernel3_pattern.iter().enumerate() {
        for (b, &wide) in row.iter().enumerate() {
            let stride = if b == 0 { config.stage_strides[s] } else { 1 };
            let prefix = format!("stage{}.block{}", s + 1, b + 1);
            push(format!("{prefix}.conv1"), 1, 1);
            push(format!("{prefix}.conv2"), if wide { 3 } else { 1 }, stride);
            push(format!("{prefix}.conv3"), 1, 1);
        }
    }
    ReceptiveField { layers, rf, jump }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architecture::config::Variant;

    #[test]
    fn paper_variants() {
        let expect = [(Variant::Rf9, 9), (Variant::Rf17, 17), (Variant::Rf33, 33), (Variant::Rf177, 177)];
        for (v, rf) in expect {
            let r = compute_receptive_field(&BagNetConfig::paper(v));
            assert_eq!(r.rf, rf, "{v}");
            assert_eq!(r.jump, 8);
        }
    }

    #[test]
    fn desk_variants() {
        let expect = [(Variant::Rf9, 9), (Variant::Rf17, 17), (Variant::Rf33, 33), (Variant::Rf177, 33)];
        for (v, rf) in expect {
            assert_eq!(compute_receptive_field(&BagNetConfig::desk(v)).rf, rf, "{v}");
        }
    }

    #[test]
    fn single_three_cube_conv() {
        let r = compute_receptive_field(&BagNetConfig::stem_only(4));
        assert_eq!(r.rf, 3);
        assert_eq!(r.layers.len(), 2);
    }

    #[test]
    fn all_one_by_one_stays_at_stem() {
        let mut c = BagNetConfig::desk(Variant::Rf9);
        c.kernel3_pattern = vec![vec![false]; 4];
        assert_eq!(compute_receptive_field(&c).rf, 3);
    }
}
