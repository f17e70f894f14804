//! Phase-constrained magnitude loss and SI-SDR.

use std::str::FromStr;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// How the real and imaginary magnitude errors are combined per bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MagnitudeMode {
    /// `|(|S_r| − |Ŝ_r|) + (|S_i| − |Ŝ_i|)|`. The two differences can cancel.
    #[default]
    SummedAbs,
    /// `||S_r| − |Ŝ_r|| + ||S_i| − |Ŝ_i||`.
    SplitAbs,
}

impl FromStr for MagnitudeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "summed" => Ok(Self::SummedAbs),
            "split" => Ok(Self::SplitAbs),
            _ => Err(Error::Config(format!("unknown magnitude loss mode {s:?} (summed|split)"))),
        }
    }
}

impl MagnitudeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SummedAbs => "summed",
            Self::SplitAbs => "split",
        }
    }
}

fn check_ri(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b || a.len() != 3 || a[0] != 2 {
        return Err(Error::Shape {
            op,
            detail: format!("expected matching [2, T, F] spectrograms, got {a:?} and {b:?}"),
        });
    }
    Ok(())
}

/// STFT magnitude loss between `[2, T, F]` spectrograms, averaged over bins.
pub fn stft_mag_loss<'t, S: Scalar>(
    target: &Var<'t, S>,
    estimate: &Var<'t, S>,
    mode: MagnitudeMode,
) -> Result<Var<'t, S>> {
    check_ri("stft_mag_loss", target.shape(), estimate.shape())?;
    let bins = target.shape()[1] * target.shape()[2];
    let diff = target.abs().sub(&estimate.abs())?;
    let (re, im) = (diff.slice(0, 0, 1)?, diff.slice(0, 1, 1)?);
    let per_bin = match mode {
        MagnitudeMode::SummedAbs => re.add(&im)?.abs(),
        MagnitudeMode::SplitAbs => re.abs().add(&im.abs())?,
    };
    Ok(per_bin.sum().scale(1.0 / bins as f64))
}

#[derive(Clone)]
pub struct LossBreakdown<'t, S: Scalar> {
    pub total: Var<'t, S>,
    pub speech_term: Var<'t, S>,
    pub noise_term: Var<'t, S>,
}

impl<S: Scalar> LossBreakdown<'_, S> {
    pub fn values(&self) -> (f64, f64, f64) {
        (
            self.total.value().item().f64(),
            self.speech_term.value().item().f64(),
            self.noise_term.value().item().f64(),
        )
    }
}

/// Average of the speech magnitude loss and the noise magnitude loss, with
/// noise taken as mixture minus speech on both sides.
pub fn pcm_loss<'t, S: Scalar>(
    target: &Var<'t, S>,
    estimate: &Var<'t, S>,
    mixture_ref: &Var<'t, S>,
    mode: MagnitudeMode,
) -> Result<LossBreakdown<'t, S>> {
    check_ri("pcm_loss", target.shape(), mixture_ref.shape())?;
    let speech_term = stft_mag_loss(target, estimate, mode)?;
    let noise = mixture_ref.sub(target)?;
    let noise_hat = mixture_ref.sub(estimate)?;
    let noise_term = stft_mag_loss(&noise, &noise_hat, mode)?;
    let total = speech_term.add(&noise_term)?.scale(0.5);
    Ok(LossBreakdown {
        total,
        speech_term,
        noise_term,
    })
}

/// Reported when the estimate is an exact scaled copy of the reference.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant SDR in dB on zero-mean signals, capped at [`SI_SDR_CAP_DB`].
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() || estimate.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "si_sdr needs equal non-empty lengths, got {} and {}",
            estimate.len(),
            reference.len()
        )));
    }
    let centered = |x: &[f64]| {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| v - mean).collect::<Vec<_>>()
    };
    let (e, r) = (centered(estimate), centered(reference));
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::InvalidArgument("si_sdr reference is zero".into()));
    }
    let alpha = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target: f64 = alpha * alpha * rr;
    let noise: f64 = e
        .iter()
        .zip(&r)
        .map(|(a, b)| (a - alpha * b).powi(2))
        .sum();
    if noise <= target * 1e-10 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / noise).log10()).min(SI_SDR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    fn ri(re: f64, im: f64) -> Tensor<f64> {
        Tensor::from_f64(&[2, 1, 1], &[re, im]).unwrap()
    }

    #[test]
    fn printed_formula_cancels() {
        let tape = Tape::<f64>::inference();
        let s = tape.constant(ri(1.0, 0.0));
        let e = tape.constant(ri(0.0, 1.0));
        let l = stft_mag_loss(&s, &e, MagnitudeMode::SummedAbs).unwrap();
        assert_eq!(l.value().item(), 0.0);
        let l = stft_mag_loss(&s, &e, MagnitudeMode::SplitAbs).unwrap();
        assert_eq!(l.value().item(), 2.0);
    }

    #[test]
    fn si_sdr_basics() {
        let r: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
        assert!(si_sdr(&r, &vec![0.0; 100]).is_err());
    }
}
