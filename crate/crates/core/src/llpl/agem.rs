use crate::mlp::GradientVector;

/// Reference gradients shorter than this cannot define a constraint.
pub const MIN_REF_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionOutcome {
    /// `g . g_ref >= 0`; gradient returned untouched.
    Passthrough,
    Projected,
    /// Conflict with a vanishing reference gradient; gradient returned untouched.
    DegenerateReference,
}

/// A-GEM step direction: the closest vector to `g` that does not increase
/// the memory loss to first order.
///
/// Returns `g` unchanged when it already agrees with `g_ref`, otherwise
/// `g - (g.g_ref / g_ref.g_ref) g_ref`.
pub fn agem_project(g: &GradientVector, g_ref: &GradientVector) -> (GradientVector, ProjectionOutcome) {
    assert_eq!(g.len(), g_ref.len(), "gradient lengths differ");
    let dot = g.dot(g_ref);
    if dot >= 0.0 {
        return (g.clone(), ProjectionOutcome::Passthrough);
    }
    let ref_sq = g_ref.dot(g_ref);
    if ref_sq.sqrt() < MIN_REF_NORM {
        log::warn!("conflicting gradient with vanishing reference gradient; skipping projection");
        return (g.clone(), ProjectionOutcome::DegenerateReference);
    }
    let mut out = g.clone();
    out.add_scaled(g_ref, -dot / ref_sq);
    (out, ProjectionOutcome::Projected)
}
