//! Text checkpoints.
//!
//! Floats are written in the shortest form that parses back to the same bits,
//! so a loaded model reproduces forward outputs exactly.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::classifier::PrototypeMatrix;
use super::encoder::{Activation, DenseLayer, Encoder};
use crate::error::{PdaError, Result};

const MAGIC: &str = "#pda-checkpoint v1";

/// Encoder, source prototypes and (after adaptation) target classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: Encoder,
    pub prototypes: PrototypeMatrix,
    /// Target classifiers; index 0 is the designated evaluation classifier.
    pub ensemble: Vec<Array2<f64>>,
}

impl Checkpoint {
    /// Weights used for prediction: the first target classifier when present.
    pub fn eval_weights(&self) -> &Array2<f64> {
        self.ensemble
            .first()
            .unwrap_or_else(|| self.prototypes.weights())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let dims: Vec<String> = self.encoder.dims().iter().map(usize::to_string).collect();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(
            out,
            "encoder dims={} activation={} seed={}",
            dims.join(","),
            self.encoder.activation().as_str(),
            self.encoder.seed()
        )
        .unwrap();
        for (i, layer) in self.encoder.layers().iter().enumerate() {
            writeln!(out, "layer {i} weight").unwrap();
            write_matrix(&mut out, &layer.weight);
            writeln!(out, "layer {i} bias").unwrap();
            write_row(&mut out, layer.bias.iter());
        }
        writeln!(
            out,
            "prototypes classes={} frozen={}",
            self.prototypes.num_classes(),
            self.prototypes.is_frozen()
        )
        .unwrap();
        write_matrix(&mut out, self.prototypes.weights());
        writeln!(out, "ensemble members={}", self.ensemble.len()).unwrap();
        for (m, w) in self.ensemble.iter().enumerate() {
            writeln!(out, "member {m}").unwrap();
            write_matrix(&mut out, w);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        if lines.next()? != MAGIC {
            return Err(lines.error("not a pda checkpoint"));
        }
        let header = lines.next()?;
        let fields =
            key_values(header, "encoder").ok_or_else(|| lines.error("bad encoder line"))?;
        let dims: Vec<usize> = field(&fields, "dims")
            .ok_or_else(|| lines.error("missing dims"))?
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| lines.error("bad dims"))?;
        let activation = field(&fields, "activation")
            .and_then(Activation::parse)
            .ok_or_else(|| lines.error("bad activation"))?;
        let seed: u64 = field(&fields, "seed")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| lines.error("bad seed"))?;
        if dims.len() < 2 {
            return Err(lines.error("encoder needs at least two widths"));
        }

        let mut layers = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            lines.expect(&format!("layer {i} weight"))?;
            let weight = lines.matrix(w[0], w[1])?;
            lines.expect(&format!("layer {i} bias"))?;
            let bias = Array1::from(lines.row(w[1])?);
            layers.push(DenseLayer { weight, bias });
        }
        let encoder = Encoder::from_layers(layers, activation, seed)?;
        let d_z = encoder.output_dim();

        let header = lines.next()?;
        let fields =
            key_values(header, "prototypes").ok_or_else(|| lines.error("bad prototypes line"))?;
        let classes: usize = field(&fields, "classes")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| lines.error("bad class count"))?;
        let frozen = match field(&fields, "frozen") {
            Some("true") => true,
            Some("false") => false,
            _ => return Err(lines.error("bad frozen flag")),
        };
        let mut prototypes = PrototypeMatrix::from_weights(lines.matrix(d_z, classes)?);
        if frozen {
            prototypes.freeze();
        }

        let header = lines.next()?;
        let members: usize = key_values(header, "ensemble")
            .and_then(|f| field(&f, "members").and_then(|s| s.parse().ok()))
            .ok_or_else(|| lines.error("bad ensemble line"))?;
        let mut ensemble = Vec::with_capacity(members);
        for m in 0..members {
            lines.expect(&format!("member {m}"))?;
            ensemble.push(lines.matrix(d_z, classes)?);
        }
        Ok(Self {
            encoder,
            prototypes,
            ensemble,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn write_row<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let row: Vec<String> = values.map(|v| format!("{v:e}")).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

fn write_matrix(out: &mut String, m: &Array2<f64>) {
    for row in m.rows() {
        write_row(out, row.iter());
    }
}

fn key_values<'a>(line: &'a str, tag: &str) -> Option<Vec<(&'a str, &'a str)>> {
    let mut parts = line.split_whitespace();
    if parts.next()? != tag {
        return None;
    }
    parts.map(|p| p.split_once('=')).collect()
}

fn field<'a>(fields: &[(&'a str, &'a str)], key: &str) -> Option<&'a str> {
    fields.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    current: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            current: 0,
        }
    }

    fn error(&self, message: &str) -> PdaError {
        PdaError::Parse {
            line: self.current,
            message: message.to_string(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, line)) => {
                self.current = i + 1;
                Ok(line.trim())
            }
            None => {
                self.current += 1;
                Err(self.error("unexpected end of checkpoint"))
            }
        }
    }

    fn expect(&mut self, tag: &str) -> Result<()> {
        if self.next()? == tag {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{tag}`")))
        }
    }

    fn row(&mut self, width: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.error("bad number"))?;
        if values.len() != width || values.iter().any(|v| !v.is_finite()) {
            return Err(self.error(&format!("expected {width} finite values")));
        }
        Ok(values)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.row(cols)?);
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("row widths checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::classify;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut prototypes = PrototypeMatrix::random(4, 5, 3);
        prototypes.freeze();
        let member = prototypes.weights() * 1.5;
        Checkpoint {
            encoder: Encoder::new(&[6, 8, 4], Activation::Tanh, 7).unwrap(),
            prototypes,
            ensemble: vec![member.clone(), member],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample();
        let text = ckpt.render();
        let loaded = Checkpoint::parse(&text).unwrap();
        assert_eq!(loaded, ckpt);
        assert_eq!(loaded.render(), text);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_simple_fn((10, 6), || rng.random_range(-3.0..3.0));
        let a = classify(ckpt.eval_weights(), &ckpt.encoder.encode(&x).unwrap().z_l2).unwrap();
        let b = classify(
            loaded.eval_weights(),
            &loaded.encoder.encode(&x).unwrap().z_l2,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = Checkpoint {
            ensemble: vec![],
            ..sample()
        };
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        assert_eq!(loaded.eval_weights(), loaded.prototypes.weights());
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let text = sample().render();
        let cut: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            Checkpoint::parse(&cut),
            Err(PdaError::Parse { .. })
        ));
        assert!(Checkpoint::parse("hello").is_err());
    }
}
