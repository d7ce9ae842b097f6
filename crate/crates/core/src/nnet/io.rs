//! Plain-text network format. Floats are written in shortest round-trip form
//! so `load(save(net)) == net` bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use super::MlpNetwork;
use crate::error::{Error, Result};

const HEADER: &str = "oracle-ql-mlp 1";

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

impl MlpNetwork {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        writeln!(out, "{HEADER}").unwrap();
        writeln!(out, "sizes {}", sizes.join(" ")).unwrap();
        writeln!(out, "slope {:e}", self.slope).unwrap();
        writeln!(out, "input_shift {}", join(&self.input_shift)).unwrap();
        writeln!(out, "input_scale {}", join(&self.input_scale)).unwrap();
        writeln!(out, "output {:e} {:e}", self.output_shift, self.output_scale).unwrap();
        writeln!(out, "params {}", self.params.len()).unwrap();
        for p in &self.params {
            writeln!(out, "{p:e}").unwrap();
        }
        out
    }

    /// Parses [`MlpNetwork::to_text`] output. `origin` only labels errors.
    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(origin, reason);
        let mut lines = text.lines();
        let mut field = |name: &str| -> Result<Vec<&str>> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{name}` line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(format!("expected `{name}`, found `{line}`")));
            }
            Ok(parts.collect())
        };
        let floats = |vals: &[&str]| -> Result<Vec<f64>> {
            vals.iter()
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("bad number `{v}`: {e}"))))
                .collect()
        };

        let header = text.lines().next().unwrap_or_default();
        if header != HEADER {
            return Err(bad(format!("unsupported header `{header}`")));
        }
        field("oracle-ql-mlp")?;
        let sizes = field("sizes")?
            .iter()
            .map(|v| v.parse::<usize>().map_err(|e| bad(format!("bad size `{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(bad(format!("invalid layer sizes {sizes:?}")));
        }
        let slope = floats(&field("slope")?)?;
        let input_shift = floats(&field("input_shift")?)?;
        let input_scale = floats(&field("input_scale")?)?;
        let output = floats(&field("output")?)?;
        let count = field("params")?;
        if slope.len() != 1 || output.len() != 2 || count.len() != 1 {
            return Err(bad("malformed scalar field".into()));
        }
        let mut net = MlpNetwork::zeros(sizes[0], &sizes[1..sizes.len() - 1]).with_slope(slope[0]);
        let declared: usize = count[0].parse().map_err(|e| bad(format!("bad parameter count: {e}")))?;
        if declared != net.params.len() {
            return Err(bad(format!("{declared} parameters declared, layer sizes imply {}", net.params.len())));
        }
        if input_shift.len() != sizes[0] || input_scale.len() != sizes[0] {
            return Err(bad("normalization length does not match input size".into()));
        }
        let body: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
        if body.len() != declared {
            return Err(bad(format!("expected {declared} parameter lines, found {}", body.len())));
        }
        net.params = floats(&body)?;
        net.input_shift = input_shift;
        net.input_scale = input_scale;
        net.output_shift = output[0];
        net.output_scale = output[1];
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = MlpNetwork::new(4, &[7, 5], &mut rng);
        net.set_input_normalization(&[0.1, 1e-7, 3.0, -2.5], &[1.0, 2.0, 1e5, 0.3]).unwrap();
        net.set_output_normalization(-0.123456789, 17.0);
        let back = MlpNetwork::from_text(&net.to_text(), Path::new("mem")).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn truncated_file_rejected() {
        let net = MlpNetwork::zeros(2, &[3]);
        let text = net.to_text();
        let cut: String = text.lines().take(text.lines().count() - 1).collect::<Vec<_>>().join("\n");
        assert!(matches!(MlpNetwork::from_text(&cut, Path::new("x")), Err(Error::Format { .. })));
    }

    #[test]
    fn wrong_header_rejected() {
        let text = MlpNetwork::zeros(2, &[3]).to_text().replacen("mlp 1", "mlp 9", 1);
        assert!(MlpNetwork::from_text(&text, Path::new("x")).is_err());
    }
}
