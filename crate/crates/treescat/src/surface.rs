//! The spectral parameter surface for the adjacency operator on `T_q`.
//!
//! Energies are parameterized by `s` on the cylinder `R/tau Z x iR` with
//! `tau = 2 pi / log q`, through `lambda_s = q^(1/2+is) + q^(1/2-is)`. Real
//! `s` (the circle `S0`) double-covers the spectral band
//! `I_q = [-2 sqrt q, 2 sqrt q]`; `Im s > 0` (the physical sheet) maps
//! bijectively onto the complement of the band. The module owns the closed
//! forms attached to this parameterization: the root constants
//! `alpha(s) = q^(-1/2+is)` and `C(s) = 1/(q^(1/2-is) - q^(-1/2+is))`, the
//! square-root branch `F(lambda) ~ lambda`, the plancherel density
//! `d mu(s)`, the density of states `de(lambda)`, and the weights of the
//! on-shell energy measure `delta(lambda_sigma - a) d mu(sigma)`.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Point on the spectral surface; `re` is taken modulo `tau`, `im > 0` is
/// the physical sheet and `im = 0` the band circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralParam {
    pub re: f64,
    pub im: f64,
}

impl SpectralParam {
    pub fn real(re: f64) -> Self {
        SpectralParam { re, im: 0.0 }
    }

    pub fn complex(re: f64, im: f64) -> Self {
        SpectralParam { re, im }
    }

    pub fn is_real(&self) -> bool {
        self.im == 0.0
    }

    pub fn as_complex(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    /// The conjugate point `-s` (same energy on the band circle).
    pub fn negated(&self) -> Self {
        SpectralParam {
            re: -self.re,
            im: self.im,
        }
    }
}

/// Root constants of the three-term recurrence at a given `s`:
/// `q a^2 - lambda a + 1 = 0` with `a = alpha(s)`, and the Green prefactor
/// `c = C(s)`; `f` is `F(lambda_s)` on the physical sheet.
#[derive(Debug, Clone, Copy)]
pub struct SpectralConstants {
    pub alpha: Complex64,
    pub c: Complex64,
    pub f: Complex64,
}

/// All closed forms for a fixed branching number `q`.
#[derive(Debug, Clone, Copy)]
pub struct Surface {
    q: u32,
    ln_q: f64,
}

impl Surface {
    pub fn new(q: u32) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidParameter(format!("q = {q}, need q >= 2")));
        }
        Ok(Surface {
            q,
            ln_q: (q as f64).ln(),
        })
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn qf(&self) -> f64 {
        self.q as f64
    }

    pub fn ln_q(&self) -> f64 {
        self.ln_q
    }

    /// Period `tau = 2 pi / log q` of the spectral circle.
    pub fn tau(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.ln_q
    }

    /// Band edge `2 sqrt q`.
    pub fn band_edge(&self) -> f64 {
        2.0 * self.qf().sqrt()
    }

    /// `q^z` for complex exponents.
    pub fn q_pow(&self, z: Complex64) -> Complex64 {
        (z * self.ln_q).exp()
    }

    /// `lambda_s = q^(1/2+is) + q^(1/2-is)`; on the band circle this is
    /// `2 sqrt q cos(s log q)`, real.
    pub fn lambda(&self, s: SpectralParam) -> Complex64 {
        let is = Complex64::new(0.0, 1.0) * s.as_complex();
        self.q_pow(Complex64::new(0.5, 0.0) + is) + self.q_pow(Complex64::new(0.5, 0.0) - is)
    }

    pub fn lambda_real(&self, s: SpectralParam) -> f64 {
        debug_assert!(s.is_real());
        2.0 * self.qf().sqrt() * (s.re * self.ln_q).cos()
    }

    /// Principal branch `s(lambda) = arccos(lambda / 2 sqrt q) / log q`,
    /// in `[0, tau/2]`; the second preimage on the circle is `tau - s`.
    pub fn s_of_lambda(&self, lambda: f64) -> Result<SpectralParam> {
        let edge = self.band_edge();
        if lambda.abs() > edge {
            return Err(Error::OutOfBand { lambda });
        }
        Ok(SpectralParam::real((lambda / edge).acos() / self.ln_q))
    }

    /// `d lambda / d s = -i log q (q^(1/2-is) - q^(1/2+is)) = -i log q F(lambda_s)`.
    pub fn d_lambda_ds(&self, s: SpectralParam) -> Complex64 {
        Complex64::new(0.0, -self.ln_q) * self.constants(s).f
    }

    /// Root constants at `s`. Fails on the two poles of the Green prefactor
    /// (`s = -i/2` and `-i/2 + tau/2`, where the denominator vanishes).
    pub fn constants(&self, s: SpectralParam) -> SpectralConstants {
        let is = Complex64::new(0.0, 1.0) * s.as_complex();
        let alpha = self.q_pow(Complex64::new(-0.5, 0.0) + is);
        let denom = self.q_pow(Complex64::new(0.5, 0.0) - is) - alpha;
        let f =
            self.q_pow(Complex64::new(0.5, 0.0) - is) - self.q_pow(Complex64::new(0.5, 0.0) + is);
        SpectralConstants {
            alpha,
            c: denom.inv(),
            f,
        }
    }

    pub fn checked_constants(&self, s: SpectralParam) -> Result<SpectralConstants> {
        let k = self.constants(s);
        if !k.c.norm().is_finite() || k.c.norm() > 1e14 {
            return Err(Error::SingularParameter(format!(
                "Green prefactor pole near s = ({}, {})",
                s.re, s.im
            )));
        }
        Ok(k)
    }

    /// Branch of `sqrt(lambda^2 - 4q)` cut along the band and asymptotic to
    /// `lambda` at infinity. On the band, `+0i` gives the upper boundary
    /// value `+i sqrt(4q - lambda^2)`.
    pub fn f_of_lambda(&self, lambda: Complex64) -> Complex64 {
        let edge = Complex64::new(self.band_edge(), 0.0);
        (lambda - edge).sqrt() * (lambda + edge).sqrt()
    }

    /// Diagonal Green value `G0(lambda, x, x) = 2q / (lambda(q-1) + (q+1) F(lambda))`,
    /// the closed form in the energy variable. The sign in the denominator is
    /// fixed by `G0 ~ 1/lambda` at infinity and `Im G0(lambda + i0) < 0` on
    /// the open band.
    pub fn green0_diag_lambda(&self, lambda: Complex64) -> Complex64 {
        let q = self.qf();
        2.0 * q / (lambda * (q - 1.0) + (q + 1.0) * self.f_of_lambda(lambda))
    }

    /// Plancherel density of the inversion measure on the band circle:
    /// `mu(s) = (q+1) log q / pi * sin^2(s log q) / (q + 1/q - 2 cos(2 s log q))`.
    pub fn mu_density(&self, s: SpectralParam) -> f64 {
        debug_assert!(s.is_real());
        let q = self.qf();
        let theta = s.re * self.ln_q;
        let num = theta.sin().powi(2);
        let den = q + 1.0 / q - 2.0 * (2.0 * theta).cos();
        (q + 1.0) * self.ln_q / std::f64::consts::PI * num / den
    }

    /// Density of states `de(lambda) = (q+1) sqrt(4q - lambda^2) / (2 pi ((q+1)^2 - lambda^2))`
    /// on the band, zero outside.
    pub fn dos_density(&self, lambda: f64) -> f64 {
        let q = self.qf();
        let disc = 4.0 * q - lambda * lambda;
        if disc <= 0.0 {
            return 0.0;
        }
        (q + 1.0) * disc.sqrt()
            / (2.0 * std::f64::consts::PI * ((q + 1.0).powi(2) - lambda * lambda))
    }

    /// The two atoms of the on-shell measure `delta(lambda_sigma - a) d mu(sigma)`
    /// on the band circle: the preimages `s(a)` and `tau - s(a)`, each with
    /// weight `mu(s)/|d lambda/d s|`. The weights sum to `de(a)`.
    pub fn on_shell_weight(&self, energy: f64) -> Result<[(SpectralParam, f64); 2]> {
        let edge = self.band_edge();
        if energy.abs() >= edge - 1e-12 {
            if energy.abs() <= edge + 1e-12 {
                return Err(Error::BandEdgeSingularity);
            }
            return Err(Error::OutOfBand { lambda: energy });
        }
        let s = self.s_of_lambda(energy)?;
        let speed = self.d_lambda_ds(s).norm();
        let w = self.mu_density(s) / speed;
        let mirrored = SpectralParam::real(self.tau() - s.re);
        Ok([(s, w), (mirrored, w)])
    }
}
