//! Closed-form reference denoisers for Gaussian data.
//!
//! These are analytic models used to exercise the diffusion machinery on
//! problems with known answers; none of them share code with the network
//! path they are used to check.
//!
//! `GaussianOracle` is the posterior-mean (MMSE) denoiser for the Gaussian
//! prior `x0 ~ N(mu, sigma_data^2 I + tau_shift^2 * 11^T)`: independent
//! per-element variance plus an optional shared random offset of strength
//! `tau_shift`, the analytic stand-in for the global scale/shift ambiguity
//! of depth. With `v = x_t - mu` and `n` elements, the posterior mean under
//! noise level `sigma` is
//!
//! `D = mu + a * v + b * mean(v) * 1`, where
//! `a = sigma_data^2 / (sigma_data^2 + sigma^2)` and
//! `b = tau^2 n sigma^2 / ((sigma_data^2 + sigma^2)(sigma_data^2 + sigma^2 + tau^2 n))`
//!
//! (Sherman-Morrison applied to `Sigma (Sigma + sigma^2 I)^{-1}`).

use crate::edm::{precondition, DenoiserFn, NoiseLevel};
use crate::error::{Error, Result};
use crate::net::ConditioningBundle;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GaussianOracle<S> {
    pub mean: Tensor<S>,
    pub sigma_data: f64,
    pub tau_shift: f64,
}

impl<S: Scalar> GaussianOracle<S> {
    pub fn new(mean: Tensor<S>, sigma_data: f64, tau_shift: f64) -> Result<Self> {
        if sigma_data < 0.0 || tau_shift < 0.0 || !sigma_data.is_finite() || !tau_shift.is_finite()
        {
            return Err(Error::Domain(
                "sigma_data and tau_shift must be finite and >= 0".into(),
            ));
        }
        Ok(GaussianOracle {
            mean,
            sigma_data,
            tau_shift,
        })
    }

    /// Shrink coefficients `(a, b)` at a noise level; see module docs.
    pub fn coefficients(&self, sigma: f64, n: usize) -> (f64, f64) {
        let s2 = sigma * sigma;
        let d2 = self.sigma_data * self.sigma_data;
        let t2n = self.tau_shift * self.tau_shift * n as f64;
        let a = d2 / (d2 + s2);
        let b = t2n * s2 / ((d2 + s2) * (d2 + s2 + t2n));
        (a, b)
    }

    /// Closed-form posterior mean `E[x0 | x_t]`.
    pub fn posterior_mean(&self, x_t: &Tensor<S>, sigma: NoiseLevel) -> Result<Tensor<S>> {
        if x_t.shape() != self.mean.shape() {
            return Err(Error::Shape(format!(
                "oracle mean {:?} does not match input {:?}",
                self.mean.shape(),
                x_t.shape()
            )));
        }
        let s = sigma.positive()?;
        let n = x_t.numel();
        let (a, b) = self.coefficients(s, n);
        let vbar: f64 = x_t
            .data()
            .iter()
            .zip(self.mean.data())
            .map(|(x, m)| x.as_f64() - m.as_f64())
            .sum::<f64>()
            / n as f64;
        let shift = b * vbar;
        let mut out = x_t.zeros_like();
        for ((o, x), m) in out
            .data_mut()
            .iter_mut()
            .zip(x_t.data())
            .zip(self.mean.data())
        {
            let mv = m.as_f64();
            *o = S::from_f64(mv + a * (x.as_f64() - mv) + shift);
        }
        Ok(out)
    }
}

impl<S: Scalar> DenoiserFn<S> for GaussianOracle<S> {
    /// The raw network recovered by inverting the preconditioning around the
    /// closed-form posterior mean; running it back through the standard
    /// composition must reproduce the posterior mean.
    fn raw(
        &self,
        x_scaled: &Tensor<S>,
        c_noise: f64,
        _cond: &ConditioningBundle<S>,
    ) -> Result<Tensor<S>> {
        let sigma = (4.0 * c_noise).exp();
        let p = precondition(NoiseLevel::new(sigma)?)?;
        let x_t = x_scaled.map(|v| S::from_f64(v.as_f64() / p.c_in));
        let d = self.posterior_mean(&x_t, NoiseLevel::new(sigma)?)?;
        let mut out = x_t.zeros_like();
        for ((o, dv), xv) in out.data_mut().iter_mut().zip(d.data()).zip(x_t.data()) {
            *o = S::from_f64((dv.as_f64() - p.c_skip * xv.as_f64()) / p.c_out);
        }
        Ok(out)
    }
}

/// `D(x; sigma) = target` for every sigma; `denoised` is exact by
/// construction, `raw` is the consistent inverted form.
#[derive(Debug, Clone)]
pub struct ConstantDenoiser<S> {
    pub target: Tensor<S>,
}

impl<S: Scalar> DenoiserFn<S> for ConstantDenoiser<S> {
    fn raw(
        &self,
        x_scaled: &Tensor<S>,
        c_noise: f64,
        _cond: &ConditioningBundle<S>,
    ) -> Result<Tensor<S>> {
        let sigma = (4.0 * c_noise).exp();
        let p = precondition(NoiseLevel::new(sigma)?)?;
        let mut out = x_scaled.zeros_like();
        for ((o, t), xs) in out
            .data_mut()
            .iter_mut()
            .zip(self.target.data())
            .zip(x_scaled.data())
        {
            // x_t = x_scaled / c_in
            let xt = xs.as_f64() / p.c_in;
            *o = S::from_f64((t.as_f64() - p.c_skip * xt) / p.c_out);
        }
        Ok(out)
    }

    fn denoised(
        &self,
        _x_t: &Tensor<S>,
        _sigma: NoiseLevel,
        _cond: &ConditioningBundle<S>,
    ) -> Result<Tensor<S>> {
        Ok(self.target.clone())
    }
}

/// The zero raw network: `F = 0`, so `D = c_skip * x_t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNet;

impl<S: Scalar> DenoiserFn<S> for ZeroNet {
    fn raw(
        &self,
        x_scaled: &Tensor<S>,
        _c_noise: f64,
        _cond: &ConditioningBundle<S>,
    ) -> Result<Tensor<S>> {
        Ok(x_scaled.zeros_like())
    }
}
