//! Emission–absorption quadrature along one ray.

/// Per-sample quantities along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    /// Ray parameters of the sample points.
    pub positions: Vec<f64>,
    /// Spacing to the next sample (to the exit point for the last one).
    pub deltas: Vec<f64>,
    pub densities: Vec<f64>,
    /// `channels` values per sample.
    pub colors: Vec<f64>,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub color: Vec<f64>,
    pub opacity: f64,
    /// Transmittance before each sample plus the final one: `N + 1` values,
    /// starting at 1.
    pub transmittance: Vec<f64>,
    /// `Ω_i (1 − exp(−τ_i δ_i))` per sample.
    pub weights: Vec<f64>,
}

/// `Ĉ = Σ Ω_i (1 − exp(−τ_i δ_i)) c_i + Ω_{N+1} · background`, with
/// `Ω_i = exp(−Σ_{j<i} τ_j δ_j)`.
pub fn composite(densities: &[f64], deltas: &[f64], colors: &[f64], channels: usize, background: &[f64]) -> Composite {
    let n = densities.len();
    assert_eq!(deltas.len(), n);
    assert_eq!(colors.len(), n * channels);
    let mut color = vec![0.0; channels];
    let mut transmittance = Vec::with_capacity(n + 1);
    let mut weights = Vec::with_capacity(n);
    let mut optical: f64 = 0.0;
    transmittance.push(1.0);
    for i in 0..n {
        let t = (-optical).exp();
        let tau_delta = densities[i] * deltas[i];
        let w = t * (1.0 - (-tau_delta).exp());
        for c in 0..channels {
            color[c] += w * colors[i * channels + c];
        }
        weights.push(w);
        optical += tau_delta;
        transmittance.push((-optical).exp());
    }
    let t_end = transmittance[n];
    for c in 0..channels {
        color[c] += t_end * background.get(c).copied().unwrap_or(0.0);
    }
    Composite { color, opacity: 1.0 - t_end, transmittance, weights }
}

impl RaySamples {
    pub fn composite(&self, background: &[f64]) -> Composite {
        composite(&self.densities, &self.deltas, &self.colors, self.channels, background)
    }
}
