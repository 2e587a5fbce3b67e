use std::path::{Path, PathBuf};

use dum_core::data::{load_idx, make_blobs, make_two_moons, Dataset, Split};
use dum_core::{Matrix, Rng};

use crate::config::DatasetSpec;
use crate::error::{HarnessError, HarnessResult};

/// Train and test splits of one dataset.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    /// Side length for square image inputs.
    pub image_side: Option<usize>,
}

fn idx_file(dir: &Path, stem: &str) -> HarnessResult<PathBuf> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(HarnessError::Config(format!("{} has no {stem}[.gz]", dir.display())))
}

fn square_side(dim: usize) -> Option<usize> {
    let s = (dim as f64).sqrt().round() as usize;
    (s * s == dim).then_some(s)
}

/// Loads or generates `spec`. Synthetic data are drawn from `rng`.
pub fn load(spec: &DatasetSpec, rng: &mut Rng) -> HarnessResult<LoadedData> {
    let (train, test) = match spec {
        DatasetSpec::Idx { dir, train_limit, test_limit } => {
            let mut train =
                load_idx(&idx_file(dir, "train-images-idx3-ubyte")?, &idx_file(dir, "train-labels-idx1-ubyte")?)?;
            let mut test =
                load_idx(&idx_file(dir, "t10k-images-idx3-ubyte")?, &idx_file(dir, "t10k-labels-idx1-ubyte")?)?;
            if let Some(n) = train_limit {
                train = train.head(*n);
            }
            if let Some(n) = test_limit {
                test = test.head(*n);
            }
            let k = train.class_count.max(test.class_count);
            train.class_count = k;
            test.class_count = k;
            let side = square_side(train.dim());
            let train = train.with_split(Split::Train);
            let test = test.with_split(Split::Test);
            return Ok(LoadedData { train, test, image_side: side });
        }
        DatasetSpec::TwoMoons { train, test, noise } => {
            (make_two_moons(*train, *noise, rng)?, make_two_moons(*test, *noise, rng)?)
        }
        DatasetSpec::Blobs { train, test, centers, sigma } => {
            (make_blobs(*train, centers, *sigma, rng)?, make_blobs(*test, centers, *sigma, rng)?)
        }
        DatasetSpec::UniformNoise { test, dim } => {
            let x = rng.uniform_matrix(*test, *dim, 0.0, 1.0);
            let t = Dataset::new(x, vec![0; *test], 1)?;
            (Dataset::new(Matrix::zeros(0, *dim), Vec::new(), 1)?, t)
        }
    };
    Ok(LoadedData { train: train.with_split(Split::Train), test: test.with_split(Split::Test), image_side: None })
}
