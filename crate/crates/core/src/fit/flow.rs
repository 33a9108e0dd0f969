//! Forward-backward consistency screening of dense flow at projected
//! vertices.

use nalgebra::Vector2;

use super::losses::FlowCorrespondence;
use super::observation::FlowGrid;

/// Keeps vertex `k` with previous projection `p` when `u = fwd(p)` lands
/// inside the grid and `|u + bwd(p + u)| < tau`.
pub fn screen_flow(
    forward: &FlowGrid,
    backward: &FlowGrid,
    tau: f64,
    previous: &[(usize, Vector2<f64>)],
) -> Vec<FlowCorrespondence> {
    previous
        .iter()
        .filter_map(|&(vertex, p)| {
            let f = forward.sample(&p)?;
            let u = Vector2::new(f.value[0], f.value[1]);
            let b = backward.sample(&(p + u))?;
            let residual = u + Vector2::new(b.value[0], b.value[1]);
            (residual.norm() < tau).then_some(FlowCorrespondence { vertex, u })
        })
        .collect()
}
