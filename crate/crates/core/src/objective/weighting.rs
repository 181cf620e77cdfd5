use serde::{Deserialize, Serialize};

use crate::model::{AreaWeighting, ConWeighting, InitWeighting};

/// Argument clamp for the log weighting: `log(x) = -ln(1 - min(x, 1 - LOG_EPS))`.
pub const LOG_EPS: f64 = 1e-6;

/// Scalar weighting applied to normalised quantities in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightingFunction {
    None,
    Con,
    Lin { slope: f64 },
    Squ,
    Log,
}

impl WeightingFunction {
    pub const LIN: WeightingFunction = WeightingFunction::Lin { slope: 1.0 };

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            WeightingFunction::None => 0.0,
            WeightingFunction::Con => x,
            WeightingFunction::Lin { slope } => slope * x,
            WeightingFunction::Squ => x * x,
            WeightingFunction::Log => -(1.0 - x.min(1.0 - LOG_EPS)).ln(),
        }
    }

    /// Largest value on `[0, 1]`.
    pub fn max_on_unit(self) -> f64 {
        self.apply(1.0)
    }
}

impl From<ConWeighting> for WeightingFunction {
    fn from(f: ConWeighting) -> Self {
        match f {
            ConWeighting::Con => WeightingFunction::Con,
            ConWeighting::Log => WeightingFunction::Log,
        }
    }
}

impl From<AreaWeighting> for WeightingFunction {
    fn from(f: AreaWeighting) -> Self {
        match f {
            AreaWeighting::Con => WeightingFunction::Con,
            AreaWeighting::Lin => WeightingFunction::LIN,
            AreaWeighting::Squ => WeightingFunction::Squ,
            AreaWeighting::Log => WeightingFunction::Log,
        }
    }
}

impl From<InitWeighting> for WeightingFunction {
    fn from(f: InitWeighting) -> Self {
        match f {
            InitWeighting::None => WeightingFunction::None,
            InitWeighting::Lin => WeightingFunction::LIN,
            InitWeighting::Log => WeightingFunction::Log,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definitions() {
        assert_eq!(WeightingFunction::None.apply(0.7), 0.0);
        assert_eq!(WeightingFunction::Con.apply(0.7), 0.7);
        assert_eq!(WeightingFunction::Lin { slope: 3.0 }.apply(0.5), 1.5);
        assert_eq!(WeightingFunction::Squ.apply(0.5), 0.25);
        assert!((WeightingFunction::Log.apply(0.2) - 0.223_143_551_314_209_76).abs() < 1e-15);
        assert_eq!(WeightingFunction::Log.apply(0.0), 0.0);
    }

    #[test]
    fn log_is_finite_at_one() {
        let top = WeightingFunction::Log.apply(1.0);
        assert!(top.is_finite());
        assert!((top - (-LOG_EPS.ln())).abs() < 1e-9);
        assert_eq!(WeightingFunction::Log.apply(5.0), top);
    }

    #[test]
    fn monotone_on_unit_interval() {
        for f in [
            WeightingFunction::Con,
            WeightingFunction::LIN,
            WeightingFunction::Squ,
            WeightingFunction::Log,
        ] {
            let mut prev = f.apply(0.0);
            for i in 1..=1000 {
                let v = f.apply(i as f64 / 1000.0);
                assert!(v >= prev, "{f:?} decreases at {i}");
                prev = v;
            }
        }
    }
}
