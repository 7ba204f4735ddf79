//! Channel-slice surgery: plans and applies the replacement of the first
//! `w_l` channels of every host layer with a narrow subnet, zeroes every
//! cross-connection between the two, and wires the subnet's scalar output
//! into the target-class logit of the classifier.
//!
//! The plan is a pure function of (architecture, widths, target class,
//! wiring weight): it never reads host parameter values, which is the whole
//! gray-box point. Byte ranges refer to offsets inside the SRAW image and
//! are what the deployment attacks patch.

use crate::digest::sha256_hex;
use crate::net::{
    flatten_info, parametric_info, sraw, ArchitectureSpec, ModelWeights, NetError, ParamLayerInfo,
    SubnetWidths,
};
use crate::tensor::TensorError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraftError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("target class {target} out of range for {classes} classes")]
    TargetClassOutOfRange { target: usize, classes: usize },
    #[error("wiring weight must be finite, got {0}")]
    BadWiring(f32),
    #[error("subnet does not match the plan: {0}")]
    SubnetMismatch(String),
    #[error("plan is inconsistent: {0}")]
    PlanMismatch(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A byte span inside the SRAW image (absolute offset from the image start).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteRange {
    pub offset: u64,
    pub len: u64,
}

/// Channel ranges a graft claims in one parametric layer. For the classifier
/// layer `out_range` is empty and `in_range` covers the wired columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRanges {
    pub layer: usize,
    pub out_range: (usize, usize),
    pub in_range: (usize, usize),
}

/// Everything a graft will write, computed gray-box from the architecture
/// alone: channel ranges, wiring, the exact scalar count, and the byte
/// spans inside a serialized weights file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraftPlan {
    pub arch: ArchitectureSpec,
    pub widths: SubnetWidths,
    pub target_class: usize,
    pub wiring_weight: f32,
    /// Spatial size (H*W) of the activation feeding the Flatten; fixes which
    /// flattened indices belong to subnet channels at the first Linear.
    pub fc_boundary: usize,
    pub layer_ranges: Vec<LayerRanges>,
    pub touched_scalar_count: u64,
    pub byte_ranges: Vec<ByteRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TensorSel {
    Weight,
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RegionKind {
    /// Weight rows `[0,w)`: subnet values padded with zeros to the host row.
    SubnetRows,
    /// A host weight row `o >= w`, columns `[0, prev_cols)`: zeros.
    HostRowZeros,
    /// Bias entries `[0,w)`: subnet bias values.
    SubnetBias,
    /// Classifier weight row `o`, columns `[0, w_cols)`: `lambda` at column 0
    /// of the target row, zeros elsewhere.
    WiringRow { row: usize },
}

/// One contiguous scalar run the graft writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Region {
    layer: usize,
    tensor: TensorSel,
    start: usize,
    len: usize,
    kind: RegionKind,
}

struct PlanGeometry {
    infos: Vec<ParamLayerInfo>,
    /// Columns the subnet occupies in each layer's input (flat units within
    /// a weight row). Layer 0 spans the full row.
    subnet_in_cols: Vec<usize>,
    fc_boundary: usize,
    regions: Vec<Region>,
}

fn geometry(
    arch: &ArchitectureSpec,
    widths: &SubnetWidths,
    target_class: usize,
    wiring_weight: f32,
) -> Result<PlanGeometry, GraftError> {
    arch.validate_host()?;
    widths.validate_against(arch)?;
    if target_class >= arch.num_classes {
        return Err(GraftError::TargetClassOutOfRange {
            target: target_class,
            classes: arch.num_classes,
        });
    }
    if !wiring_weight.is_finite() {
        return Err(GraftError::BadWiring(wiring_weight));
    }

    let infos = parametric_info(arch)?;
    let flat = flatten_info(arch)?;
    let w = widths.values();
    let p = infos.len();

    let mut subnet_in_cols = Vec::with_capacity(p);
    for (l, info) in infos.iter().enumerate() {
        let cols = if l == 0 {
            // the subnet reads the raw input in full
            info.row_cols
        } else if info.is_conv {
            w[l - 1] * info.kernel * info.kernel
        } else if flat.first_linear_param_index == Some(l) {
            // flattened conv activations are channel-major, so the previous
            // layer's w channels occupy the first w * (H*W) columns
            w[l - 1] * flat.spatial
        } else {
            w[l - 1]
        };
        subnet_in_cols.push(cols);
    }

    let mut regions = Vec::new();
    for (l, info) in infos.iter().enumerate() {
        let is_classifier = l == p - 1;
        if is_classifier {
            let w_cols = w[p - 2];
            if w_cols > 0 {
                for row in 0..info.out_size {
                    regions.push(Region {
                        layer: l,
                        tensor: TensorSel::Weight,
                        start: row * info.row_cols,
                        len: w_cols,
                        kind: RegionKind::WiringRow { row },
                    });
                }
            }
            continue;
        }
        let wl = w[l];
        let prev_cols = subnet_in_cols[l];
        if wl > 0 {
            regions.push(Region {
                layer: l,
                tensor: TensorSel::Weight,
                start: 0,
                len: wl * info.row_cols,
                kind: RegionKind::SubnetRows,
            });
        }
        // host rows must not read the subnet's channels; the first layer is
        // exempt because its inputs are the raw image shared by both paths
        if l > 0 && prev_cols > 0 {
            for row in wl..info.out_size {
                regions.push(Region {
                    layer: l,
                    tensor: TensorSel::Weight,
                    start: row * info.row_cols,
                    len: prev_cols,
                    kind: RegionKind::HostRowZeros,
                });
            }
        }
        if wl > 0 {
            regions.push(Region {
                layer: l,
                tensor: TensorSel::Bias,
                start: 0,
                len: wl,
                kind: RegionKind::SubnetBias,
            });
        }
    }

    Ok(PlanGeometry {
        infos,
        subnet_in_cols,
        fc_boundary: flat.spatial,
        regions,
    })
}

/// Computes a [`GraftPlan`]. Depends only on the architecture, widths,
/// target class, and wiring weight — never on host parameter values.
pub fn plan_graft(
    arch: &ArchitectureSpec,
    widths: &SubnetWidths,
    target_class: usize,
    wiring_weight: f32,
) -> Result<GraftPlan, GraftError> {
    let geo = geometry(arch, widths, target_class, wiring_weight)?;
    let layout = sraw::layout(arch)?;
    let w = widths.values();
    let p = geo.infos.len();
    let (c_in, _, _) = arch.input_shape;

    let mut layer_ranges = Vec::with_capacity(p);
    for (l, _info) in geo.infos.iter().enumerate() {
        let (out_range, in_range) = if l == p - 1 {
            ((0, 0), (0, w[p - 2]))
        } else if l == 0 {
            ((0, w[0]), (0, c_in))
        } else {
            ((0, w[l]), (0, w[l - 1]))
        };
        layer_ranges.push(LayerRanges {
            layer: l,
            out_range,
            in_range,
        });
    }

    let mut byte_ranges = Vec::with_capacity(geo.regions.len());
    let mut touched = 0u64;
    for r in &geo.regions {
        let loc = layout.tensors[r.layer];
        let base = match r.tensor {
            TensorSel::Weight => loc.weight_offset,
            TensorSel::Bias => loc.bias_offset,
        };
        byte_ranges.push(ByteRange {
            offset: (base + 4 * r.start) as u64,
            len: (4 * r.len) as u64,
        });
        touched += r.len as u64;
    }
    debug_assert!(byte_ranges.windows(2).all(|p| p[0].offset + p[0].len <= p[1].offset));

    Ok(GraftPlan {
        arch: arch.clone(),
        widths: widths.clone(),
        target_class,
        wiring_weight,
        fc_boundary: geo.fc_boundary,
        layer_ranges,
        touched_scalar_count: touched,
        byte_ranges,
    })
}

impl GraftPlan {
    pub fn to_json(&self) -> Result<String, GraftError> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and cross-checks a plan: the stored ranges and counts must
    /// equal what [`plan_graft`] derives from the stored inputs.
    pub fn from_json(json: &str) -> Result<GraftPlan, GraftError> {
        let plan: GraftPlan = serde_json::from_str(json)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), GraftError> {
        let fresh = plan_graft(&self.arch, &self.widths, self.target_class, self.wiring_weight)?;
        if fresh != *self {
            return Err(GraftError::PlanMismatch(
                "stored ranges do not match the plan inputs".into(),
            ));
        }
        Ok(())
    }
}

/// Checks the subnet's tensor shapes against what the plan's widths imply.
fn validate_subnet(plan_geo: &PlanGeometry, widths: &[usize], subnet: &ModelWeights) -> Result<(), GraftError> {
    let p = plan_geo.infos.len();
    if subnet.num_layers() != p - 1 {
        return Err(GraftError::SubnetMismatch(format!(
            "subnet has {} parametric layers, expected {}",
            subnet.num_layers(),
            p - 1
        )));
    }
    for l in 0..p - 1 {
        let info = &plan_geo.infos[l];
        let expected_w: Vec<usize> = if info.is_conv {
            let in_ch = plan_geo.subnet_in_cols[l] / (info.kernel * info.kernel);
            vec![widths[l], in_ch, info.kernel, info.kernel]
        } else {
            vec![widths[l], plan_geo.subnet_in_cols[l]]
        };
        if subnet.weight(l).shape() != expected_w.as_slice() {
            return Err(GraftError::SubnetMismatch(format!(
                "layer {l}: weight shape {:?}, expected {:?}",
                subnet.weight(l).shape(),
                expected_w
            )));
        }
        if subnet.bias(l).shape() != [widths[l]] {
            return Err(GraftError::SubnetMismatch(format!(
                "layer {l}: bias shape {:?}, expected [{}]",
                subnet.bias(l).shape(),
                widths[l]
            )));
        }
    }
    Ok(())
}

/// Materializes the values of one region. `subnet = None` yields zeros
/// everywhere (including the wiring), which is exactly the restricted host.
fn region_values(
    region: &Region,
    geo: &PlanGeometry,
    plan: &GraftPlan,
    subnet: Option<&ModelWeights>,
) -> Vec<f32> {
    match (region.kind, subnet) {
        (RegionKind::HostRowZeros, _) | (_, None) => vec![0.0; region.len],
        (RegionKind::SubnetRows, Some(sub)) => {
            let info = &geo.infos[region.layer];
            let prev_cols = geo.subnet_in_cols[region.layer];
            let w = region.len / info.row_cols;
            let mut out = vec![0.0f32; region.len];
            let sub_w = sub.weight(region.layer).data();
            for row in 0..w {
                out[row * info.row_cols..row * info.row_cols + prev_cols]
                    .copy_from_slice(&sub_w[row * prev_cols..(row + 1) * prev_cols]);
            }
            out
        }
        (RegionKind::SubnetBias, Some(sub)) => sub.bias(region.layer).data()[..region.len].to_vec(),
        (RegionKind::WiringRow { row }, Some(_)) => {
            let mut out = vec![0.0f32; region.len];
            if row == plan.target_class {
                out[0] = plan.wiring_weight;
            }
            out
        }
    }
}

fn write_regions(
    host: &ModelWeights,
    plan: &GraftPlan,
    subnet: Option<&ModelWeights>,
) -> Result<ModelWeights, GraftError> {
    let geo = geometry(&plan.arch, &plan.widths, plan.target_class, plan.wiring_weight)?;
    host.validate_for(&plan.arch)?;
    if let Some(sub) = subnet {
        validate_subnet(&geo, plan.widths.values(), sub)?;
    }
    let mut out = host.clone();
    for region in &geo.regions {
        let values = region_values(region, &geo, plan, subnet);
        let dst = match region.tensor {
            TensorSel::Weight => out.weight_mut(region.layer),
            TensorSel::Bias => out.bias_mut(region.layer),
        };
        dst.data_mut()[region.start..region.start + region.len].copy_from_slice(&values);
    }
    Ok(out)
}

/// Rewrites a host so that channel slice `[0, w_l)` of every layer carries
/// the subnet, all cross-connections are zero, and the classifier wires the
/// subnet output into the target logit. Host parameters outside the plan's
/// slices are bit-identical to the input.
pub fn apply_graft(
    host: &ModelWeights,
    subnet: &ModelWeights,
    plan: &GraftPlan,
) -> Result<ModelWeights, GraftError> {
    write_regions(host, plan, Some(subnet))
}

/// Zeroes exactly the plan's slices (subnet blocks in both directions, the
/// sacrificed biases, and the wiring column), leaving host-only paths
/// intact. This is the clean-signal arm of the logit decomposition:
/// `logits_grafted(x) = logits_restricted(x) + lambda * s(x) * e_target`.
pub fn restrict_host(host: &ModelWeights, plan: &GraftPlan) -> Result<ModelWeights, GraftError> {
    write_regions(host, plan, None)
}

/// One patch the deployment attacks write: absolute byte offset inside the
/// SRAW image plus the bytes themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraftWrite {
    pub offset: u64,
    pub bytes: Vec<u8>,
}

/// Converts a plan plus subnet weights into the byte patches that realize
/// the graft against a serialized host. The writes line up one-to-one with
/// `plan.byte_ranges`, in ascending offset order.
pub fn graft_write_list(
    plan: &GraftPlan,
    subnet: &ModelWeights,
) -> Result<Vec<GraftWrite>, GraftError> {
    let geo = geometry(&plan.arch, &plan.widths, plan.target_class, plan.wiring_weight)?;
    validate_subnet(&geo, plan.widths.values(), subnet)?;
    if geo.regions.len() != plan.byte_ranges.len() {
        return Err(GraftError::PlanMismatch(format!(
            "{} byte ranges stored, {} derived",
            plan.byte_ranges.len(),
            geo.regions.len()
        )));
    }
    let mut writes = Vec::with_capacity(geo.regions.len());
    for (region, range) in geo.regions.iter().zip(&plan.byte_ranges) {
        if range.len as usize != 4 * region.len {
            return Err(GraftError::PlanMismatch(format!(
                "byte range at offset {} has length {}, expected {}",
                range.offset,
                range.len,
                4 * region.len
            )));
        }
        let values = region_values(region, &geo, plan, Some(subnet));
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        writes.push(GraftWrite {
            offset: range.offset,
            bytes,
        });
    }
    Ok(writes)
}

/// Per-tensor change report between two weight sets of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDiff {
    pub layer: usize,
    pub tensor: String,
    /// Contiguous (start, len) runs of changed scalars.
    pub ranges: Vec<(usize, usize)>,
    pub old_digest: String,
    pub new_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraftDiff {
    pub tensors: Vec<TensorDiff>,
    pub changed_scalars: u64,
    pub total_scalars: u64,
    pub changed_ratio: f64,
}

/// Bit-exact elementwise diff of two same-architecture weight sets.
pub fn diff_weights(a: &ModelWeights, b: &ModelWeights) -> Result<GraftDiff, GraftError> {
    if a.num_layers() != b.num_layers() {
        return Err(GraftError::SubnetMismatch(format!(
            "layer counts differ: {} vs {}",
            a.num_layers(),
            b.num_layers()
        )));
    }
    let mut tensors = Vec::new();
    let mut changed = 0u64;
    let mut total = 0u64;
    for l in 0..a.num_layers() {
        for (name, ta, tb) in [
            ("weight", a.weight(l), b.weight(l)),
            ("bias", a.bias(l), b.bias(l)),
        ] {
            if ta.shape() != tb.shape() {
                return Err(GraftError::SubnetMismatch(format!(
                    "layer {l} {name} shapes differ: {:?} vs {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
            total += ta.numel() as u64;
            let mut ranges: Vec<(usize, usize)> = Vec::new();
            let mut old_bytes = Vec::new();
            let mut new_bytes = Vec::new();
            for (i, (va, vb)) in ta.data().iter().zip(tb.data()).enumerate() {
                if va.to_bits() != vb.to_bits() {
                    changed += 1;
                    old_bytes.extend_from_slice(&va.to_le_bytes());
                    new_bytes.extend_from_slice(&vb.to_le_bytes());
                    match ranges.last_mut() {
                        Some((start, len)) if *start + *len == i => *len += 1,
                        _ => ranges.push((i, 1)),
                    }
                }
            }
            if !ranges.is_empty() {
                tensors.push(TensorDiff {
                    layer: l,
                    tensor: name.to_string(),
                    ranges,
                    old_digest: sha256_hex(&old_bytes),
                    new_digest: sha256_hex(&new_bytes),
                });
            }
        }
    }
    Ok(GraftDiff {
        tensors,
        changed_scalars: changed,
        total_scalars: total,
        changed_ratio: changed as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{forward, init_model, narrow_arch, propagate_shapes};
    use crate::subnet::subnet_init;
    use crate::tensor::Tensor;

    fn tiny_plan(lambda: f32, target: usize) -> (ArchitectureSpec, SubnetWidths, GraftPlan) {
        let arch = ArchitectureSpec::tiny_toy();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let plan = plan_graft(&arch, &widths, target, lambda).unwrap();
        (arch, widths, plan)
    }

    fn tiny_subnet(seed: u64) -> ModelWeights {
        let arch = ArchitectureSpec::tiny_toy();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let sub_arch = narrow_arch(&arch, &widths).unwrap();
        subnet_init(&sub_arch, seed).unwrap()
    }

    fn rand_input(seed: u64, shape: Vec<usize>) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn plans_are_deterministic() {
        let (_, _, a) = tiny_plan(1.0, 2);
        let (_, _, b) = tiny_plan(1.0, 2);
        assert_eq!(a, b);
    }

    #[test]
    fn plan_json_round_trips_and_validates() {
        let (_, _, plan) = tiny_plan(0.5, 1);
        let json = plan.to_json().unwrap();
        let back = GraftPlan::from_json(&json).unwrap();
        assert_eq!(back, plan);

        // a tampered range must be rejected
        let mut bad = plan.clone();
        bad.byte_ranges[0].offset += 4;
        assert!(GraftPlan::from_json(&bad.to_json().unwrap()).is_err());
    }

    #[test]
    fn byte_ranges_are_disjoint_ascending_and_sized() {
        let arch = ArchitectureSpec::vgg_toy();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let plan = plan_graft(&arch, &widths, 0, 1.0).unwrap();
        let total_bytes: u64 = plan.byte_ranges.iter().map(|r| r.len).sum();
        assert_eq!(total_bytes, 4 * plan.touched_scalar_count);
        for pair in plan.byte_ranges.windows(2) {
            assert!(pair[0].offset + pair[0].len <= pair[1].offset);
        }
        let file_len = sraw::layout(&arch).unwrap().file_len as u64;
        let last = plan.byte_ranges.last().unwrap();
        assert!(last.offset + last.len <= file_len);
    }

    #[test]
    fn vgg_toy_touched_count_matches_hand_arithmetic() {
        let arch = ArchitectureSpec::vgg_toy();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let plan = plan_graft(&arch, &widths, 0, 1.0).unwrap();

        // independent hand arithmetic over the layer sizes
        let infos = parametric_info(&arch).unwrap();
        let flat = flatten_info(&arch).unwrap();
        let w = widths.values();
        let mut expected = 0u64;
        for (l, info) in infos.iter().enumerate() {
            if l == infos.len() - 1 {
                expected += (info.out_size * w[l - 1]) as u64;
                continue;
            }
            let prev_cols = if l == 0 {
                info.row_cols
            } else if info.is_conv {
                w[l - 1] * info.kernel * info.kernel
            } else if flat.first_linear_param_index == Some(l) {
                w[l - 1] * flat.spatial
            } else {
                w[l - 1]
            };
            expected += (w[l] * info.row_cols) as u64; // replaced rows
            if l > 0 {
                expected += ((info.out_size - w[l]) * prev_cols) as u64; // zeroed host rows
            }
            expected += w[l] as u64; // bias
        }
        assert_eq!(plan.touched_scalar_count, expected);
        // frozen value from the layer-by-layer sum for vgg-toy, widths all 1
        assert_eq!(plan.touched_scalar_count, 3123);
    }

    #[test]
    fn degenerate_zero_width_plan_changes_nothing() {
        let arch = ArchitectureSpec::tiny_toy();
        let widths = SubnetWidths::new(vec![0, 0]);
        let plan = plan_graft(&arch, &widths, 0, 1.0).unwrap();
        assert_eq!(plan.touched_scalar_count, 0);
        assert!(plan.byte_ranges.is_empty());

        let host = init_model(&arch, 1).unwrap();
        // an empty subnet: zero-width tensors matching the narrowed shapes
        let geo_sub = ModelWeights::from_pairs(vec![
            (Tensor::zeros(vec![0, 1, 3, 3]), Tensor::zeros(vec![0])),
            (Tensor::zeros(vec![0, 0]), Tensor::zeros(vec![0])),
        ]);
        let grafted = apply_graft(&host, &geo_sub, &plan).unwrap();
        assert_eq!(grafted, host);
        let restricted = restrict_host(&host, &plan).unwrap();
        assert_eq!(restricted, host);
    }

    #[test]
    fn grafted_logits_decompose_exactly() {
        let arch = ArchitectureSpec::tiny_toy();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let sub_arch = narrow_arch(&arch, &widths).unwrap();
        let lambda = 1.0f32;
        let target = 2usize;
        let plan = plan_graft(&arch, &widths, target, lambda).unwrap();
        let subnet = tiny_subnet(3);

        for host_seed in 0..3u64 {
            let host = init_model(&arch, host_seed).unwrap();
            let grafted = apply_graft(&host, &subnet, &plan).unwrap();
            let restricted = restrict_host(&host, &plan).unwrap();
            for input_seed in 0..10u64 {
                let x = rand_input(100 + input_seed, vec![1, 8, 8]);
                let lg = forward(&arch, &grafted, &x).unwrap();
                let lr = forward(&arch, &restricted, &x).unwrap();
                let s = forward(&sub_arch, &subnet, &x).unwrap().data()[0];
                for k in 0..arch.num_classes {
                    let expect = lr.data()[k] + if k == target { lambda * s } else { 0.0 };
                    let got = lg.data()[k];
                    assert!(
                        (got - expect).abs() <= 1e-3,
                        "class {k}: grafted {got} vs restricted+boost {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn restricted_model_zeroes_the_subnet_path() {
        let arch = ArchitectureSpec::tiny_toy();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let plan = plan_graft(&arch, &widths, 0, 1.0).unwrap();
        let host = init_model(&arch, 5).unwrap();
        let restricted = restrict_host(&host, &plan).unwrap();

        let x = rand_input(6, vec![1, 8, 8]);
        let (_, acts) = crate::net::forward_captured(&arch, &restricted, &x).unwrap();
        // activation after the first conv: channel 0 is the subnet slot
        let conv_out = &acts[1];
        let plane = conv_out.shape()[1] * conv_out.shape()[2];
        assert!(conv_out.data()[..plane].iter().all(|&v| v == 0.0));
        // activation after the hidden linear: unit 0 is the subnet slot
        let lin_idx = 1 + arch
            .layers
            .iter()
            .position(|l| matches!(l, crate::net::LayerSpec::Linear { .. }))
            .unwrap();
        assert_eq!(acts[lin_idx].data()[0], 0.0);
    }

    #[test]
    fn changes_stay_inside_plan_slices() {
        let arch = ArchitectureSpec::tiny_toy();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let plan = plan_graft(&arch, &widths, 1, 1.0).unwrap();
        let host = init_model(&arch, 7).unwrap();
        let subnet = tiny_subnet(8);
        let grafted = apply_graft(&host, &subnet, &plan).unwrap();
        let restricted = restrict_host(&host, &plan).unwrap();

        // positions allowed to change, from the plan's own byte ranges
        let layout = sraw::layout(&arch).unwrap();
        let mut allowed = std::collections::HashSet::new();
        for range in &plan.byte_ranges {
            for b in (range.offset..range.offset + range.len).step_by(4) {
                allowed.insert(b);
            }
        }
        let positions = |diff: &GraftDiff| -> Vec<u64> {
            let mut v = Vec::new();
            for td in &diff.tensors {
                let loc = layout.tensors[td.layer];
                let base = if td.tensor == "weight" {
                    loc.weight_offset
                } else {
                    loc.bias_offset
                };
                for (start, len) in &td.ranges {
                    for i in *start..*start + *len {
                        v.push((base + 4 * i) as u64);
                    }
                }
            }
            v
        };
        for d in [
            diff_weights(&host, &grafted).unwrap(),
            diff_weights(&host, &restricted).unwrap(),
            diff_weights(&restricted, &grafted).unwrap(),
        ] {
            assert!(positions(&d).iter().all(|p| allowed.contains(p)));
        }
    }

    #[test]
    fn graft_is_gray_box_and_idempotent() {
        let arch = ArchitectureSpec::tiny_toy();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let plan = plan_graft(&arch, &widths, 3, 1.0).unwrap();
        let subnet = tiny_subnet(9);

        // identical write list regardless of host
        let writes = graft_write_list(&plan, &subnet).unwrap();
        assert_eq!(writes.len(), plan.byte_ranges.len());

        let host_a = init_model(&arch, 10).unwrap();
        let host_b = init_model(&arch, 11).unwrap();
        let graft_a = apply_graft(&host_a, &subnet, &plan).unwrap();
        let graft_b = apply_graft(&host_b, &subnet, &plan).unwrap();

        // the written values agree between instances at every plan position
        let bytes_a = sraw::encode_weights(&arch, &graft_a).unwrap();
        let bytes_b = sraw::encode_weights(&arch, &graft_b).unwrap();
        for w in &writes {
            let lo = w.offset as usize;
            let hi = lo + w.bytes.len();
            assert_eq!(&bytes_a[lo..hi], w.bytes.as_slice());
            assert_eq!(&bytes_b[lo..hi], w.bytes.as_slice());
        }

        // idempotence
        let twice = apply_graft(&graft_a, &subnet, &plan).unwrap();
        assert_eq!(twice, graft_a);
    }

    #[test]
    fn diff_counts_match_the_plan_exactly() {
        let arch = ArchitectureSpec::tiny_toy();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let plan = plan_graft(&arch, &widths, 0, 1.0).unwrap();
        let host = init_model(&arch, 12).unwrap();
        // subnet_init gives nonzero biases, so every written scalar differs
        // from the host's values
        let subnet = tiny_subnet(13);
        let grafted = apply_graft(&host, &subnet, &plan).unwrap();

        let diff = diff_weights(&host, &grafted).unwrap();
        assert_eq!(diff.changed_scalars, plan.touched_scalar_count);
        let bytes: u64 = plan.byte_ranges.iter().map(|r| r.len).sum();
        assert_eq!(diff.changed_scalars, bytes / 4);
        assert_eq!(diff.total_scalars, host.total_scalars() as u64);

        let empty = diff_weights(&host, &host).unwrap();
        assert_eq!(empty.changed_scalars, 0);
        assert!(empty.tensors.is_empty());
    }

    #[test]
    fn vgg_toy_changed_ratio_is_modest() {
        let arch = ArchitectureSpec::vgg_toy();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let plan = plan_graft(&arch, &widths, 0, 1.0).unwrap();
        let host = init_model(&arch, 14).unwrap();
        let sub_arch = narrow_arch(&arch, &widths).unwrap();
        let subnet = subnet_init(&sub_arch, 15).unwrap();
        let grafted = apply_graft(&host, &subnet, &plan).unwrap();
        let diff = diff_weights(&host, &grafted).unwrap();
        assert!(
            diff.changed_ratio < 0.15,
            "changed ratio {}",
            diff.changed_ratio
        );
    }

    #[test]
    fn zero_lambda_keeps_the_wiring_silent() {
        let arch = ArchitectureSpec::tiny_toy();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let plan = plan_graft(&arch, &widths, 1, 0.0).unwrap();
        let host = init_model(&arch, 16).unwrap();
        let subnet = tiny_subnet(17);
        let grafted = apply_graft(&host, &subnet, &plan).unwrap();
        let restricted = restrict_host(&host, &plan).unwrap();

        // wiring column is all zeros
        let classifier = grafted.num_layers() - 1;
        let n_in = grafted.weight(classifier).shape()[1];
        for k in 0..arch.num_classes {
            assert_eq!(grafted.weight(classifier).data()[k * n_in], 0.0);
        }
        // and the grafted logits equal the restricted logits on any input
        let x = rand_input(18, vec![1, 8, 8]);
        let lg = forward(&arch, &grafted, &x).unwrap();
        let lr = forward(&arch, &restricted, &x).unwrap();
        for (a, b) in lg.data().iter().zip(lr.data()) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn huge_lambda_forces_the_argmax() {
        let arch = ArchitectureSpec::tiny_toy();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let target = 3usize;
        let plan = plan_graft(&arch, &widths, target, 1000.0).unwrap();
        let host = init_model(&arch, 19).unwrap();
        let subnet = tiny_subnet(20);
        let sub_arch = narrow_arch(&arch, &widths).unwrap();
        let grafted = apply_graft(&host, &subnet, &plan).unwrap();

        let mut forced = 0;
        let mut total = 0;
        for seed in 0..20 {
            let x = rand_input(300 + seed, vec![1, 8, 8]);
            let s = forward(&sub_arch, &subnet, &x).unwrap().data()[0];
            if s > 0.01 {
                total += 1;
                let lg = forward(&arch, &grafted, &x).unwrap();
                if crate::net::argmax(&lg) == target {
                    forced += 1;
                }
            }
        }
        assert!(total > 0, "no inputs activated the subnet at all");
        assert_eq!(forced, total);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let arch = ArchitectureSpec::tiny_toy();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        assert!(matches!(
            plan_graft(&arch, &widths, 99, 1.0),
            Err(GraftError::TargetClassOutOfRange { .. })
        ));
        assert!(matches!(
            plan_graft(&arch, &widths, 0, f32::NAN),
            Err(GraftError::BadWiring(_))
        ));
        let plan = plan_graft(&arch, &widths, 0, 1.0).unwrap();
        let wrong_subnet = tiny_subnet(21);
        let mut bad = wrong_subnet.clone();
        *bad.weight_mut(0) = Tensor::zeros(vec![2, 1, 3, 3]);
        let host = init_model(&arch, 22).unwrap();
        assert!(matches!(
            apply_graft(&host, &bad, &plan),
            Err(GraftError::SubnetMismatch(_))
        ));
    }
}
