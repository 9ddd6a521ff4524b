//! Saving a layer as a directory: `meta.json`, `W_1.ndt … W_N.ndt` and,
//! with biases, `b_1.ndt … b_N.ndt`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NdLinearLayer;
use crate::error::{Error, Result};
use crate::tensor::{read_ndt, write_ndt, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMeta {
    pub in_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    pub with_bias: bool,
    #[serde(rename = "N")]
    pub n: usize,
}

fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ndt(&mut w, t)?;
    w.flush()?;
    Ok(())
}

fn read_tensor(path: &Path) -> Result<Tensor> {
    read_ndt(BufReader::new(File::open(path)?))
}

impl NdLinearLayer {
    pub fn meta(&self) -> LayerMeta {
        LayerMeta {
            in_dims: self.in_dims.clone(),
            out_dims: self.out_dims.clone(),
            with_bias: self.has_bias(),
            n: self.modes(),
        }
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let meta = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(dir.join("meta.json"), meta)?;
        for (k, w) in self.weights.iter().enumerate() {
            write_tensor(&dir.join(format!("W_{}.ndt", k + 1)), w)?;
        }
        if let Some(bs) = &self.biases {
            for (k, b) in bs.iter().enumerate() {
                write_tensor(&dir.join(format!("b_{}.ndt", k + 1)), b)?;
            }
        }
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: LayerMeta = serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?;
        if meta.n != meta.in_dims.len() || meta.n != meta.out_dims.len() {
            return Err(Error::Config(format!(
                "meta.json: N = {} disagrees with in_dims {:?} / out_dims {:?}",
                meta.n, meta.in_dims, meta.out_dims
            )));
        }
        let weights = (1..=meta.n)
            .map(|k| read_tensor(&dir.join(format!("W_{k}.ndt"))))
            .collect::<Result<Vec<_>>>()?;
        let biases = if meta.with_bias {
            Some(
                (1..=meta.n)
                    .map(|k| read_tensor(&dir.join(format!("b_{k}.ndt"))))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let layer = Self::new(weights, biases)?;
        if layer.in_dims != meta.in_dims || layer.out_dims != meta.out_dims {
            return Err(Error::Config(format!(
                "weight files describe {:?} -> {:?}, meta.json says {:?} -> {:?}",
                layer.in_dims, layer.out_dims, meta.in_dims, meta.out_dims
            )));
        }
        Ok(layer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(3);
        for with_bias in [false, true] {
            let mut layer =
                NdLinearLayer::init_xavier(&[2, 3, 4], &[3, 1, 2], with_bias, &mut rng).unwrap();
            if let Some(bs) = layer.biases_mut() {
                bs[1] = Tensor::randn(&mut rng, &[1]).unwrap();
            }
            let path = dir.path().join(format!("layer_{with_bias}"));
            layer.save_dir(&path).unwrap();
            assert!(path.join("W_3.ndt").exists());
            assert_eq!(path.join("b_1.ndt").exists(), with_bias);
            let back = NdLinearLayer::load_dir(&path).unwrap();
            assert_eq!(back, layer);

            let meta: serde_json::Value =
                serde_json::from_slice(&std::fs::read(path.join("meta.json")).unwrap()).unwrap();
            assert_eq!(meta["N"], 3);
            assert_eq!(meta["with_bias"], with_bias);
        }
    }

    #[test]
    fn load_rejects_inconsistent_meta() {
        let dir = tempfile::tempdir().unwrap();
        let layer = NdLinearLayer::init_xavier(&[2, 2], &[2, 2], false, &mut Rng::new(1)).unwrap();
        layer.save_dir(dir.path()).unwrap();
        std::fs::write(
            dir.path().join("meta.json"),
            r#"{"in_dims":[2,3],"out_dims":[2,2],"with_bias":false,"N":2}"#,
        )
        .unwrap();
        assert!(NdLinearLayer::load_dir(dir.path()).is_err());
    }
}
