//! User/item embedding matrix and its on-disk checkpoint format.
//!
//! A checkpoint is a 16-byte little-endian header (`b"RKFM"`, n, m, d as `u32`)
//! followed by `(n + m) * d` little-endian `f32` values in row-major order,
//! users first. A sidecar `<file>.manifest` holds `key=value` lines.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::CheckpointError;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RKFM";

/// `(n + m) × d` matrix whose first `n` rows are users and last `m` rows items.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
    n_users: usize,
}

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>, n_users: usize) -> Self {
        assert!(n_users <= data.nrows(), "more users than rows");
        Self { data, n_users }
    }

    pub fn zeros(n_users: usize, n_items: usize, dim: usize) -> Self {
        Self::new(Array2::zeros((n_users + n_items, dim)), n_users)
    }

    /// Standard normal entries scaled by `scale`, reproducible from `seed`.
    pub fn gaussian(n_users: usize, n_items: usize, dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_simple_fn((n_users + n_items, dim), || {
            let x: f64 = StandardNormal.sample(&mut rng);
            x * scale
        });
        Self::new(data, n_users)
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.data.nrows() - self.n_users
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn users(&self) -> ArrayView2<'_, f64> {
        self.data.slice(ndarray::s![..self.n_users, ..])
    }

    pub fn items(&self) -> ArrayView2<'_, f64> {
        self.data.slice(ndarray::s![self.n_users.., ..])
    }

    pub fn users_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let n = self.n_users;
        self.data.slice_mut(ndarray::s![..n, ..])
    }

    pub fn items_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let n = self.n_users;
        self.data.slice_mut(ndarray::s![n.., ..])
    }

    pub fn user(&self, u: usize) -> ArrayView1<'_, f64> {
        self.data.row(u)
    }

    pub fn item(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(self.n_users + i)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// First row containing a non-finite entry.
    pub fn first_non_finite_row(&self) -> Option<usize> {
        self.data
            .axis_iter(Axis(0))
            .position(|r| r.iter().any(|x| !x.is_finite()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.data.dim(), other.data.dim());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Max over rows of `‖a_r − b_r‖ / max(‖b_r‖, 1e-12)`.
    pub fn max_rel_row_diff(&self, reference: &Self) -> f64 {
        assert_eq!(self.data.dim(), reference.data.dim());
        self.data
            .axis_iter(Axis(0))
            .zip(reference.data.axis_iter(Axis(0)))
            .map(|(a, b)| {
                let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                let scale = b.dot(&b).sqrt().max(1e-12);
                diff / scale
            })
            .fold(0.0, f64::max)
    }

    pub fn save(&self, path: &Path, manifest: &[(String, String)]) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&CHECKPOINT_MAGIC)?;
        for v in [self.n_users(), self.n_items(), self.dim()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for &x in self.data.iter() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        w.flush()?;
        let mut text = String::new();
        for (k, v) in manifest {
            text.push_str(&format!("{k}={v}\n"));
        }
        fs::write(manifest_path(path), text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path)?;
        if bytes.len() < 16 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()) as usize;
        let (n, m, d) = (word(1), word(2), word(3));
        let expected = (n + m) * d;
        let body = &bytes[16..];
        if body.len() != expected * 4 {
            return Err(CheckpointError::Truncated {
                expected,
                found: body.len() / 4,
            });
        }
        let values: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let data = Array2::from_shape_vec((n + m, d), values).expect("shape checked above");
        Ok(Self::new(data, n))
    }
}

pub fn manifest_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}
