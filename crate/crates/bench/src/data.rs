//! Synthetic problem generation, the dataset cache format, and a stand-in
//! image corpus for running the image experiments without a dataset file.

use crate::error::DataError;
use sparsecode::rng::{self, stream, ChaCha12Rng};
use sparsecode::Mat;
use std::fs;
use std::io::Write;
use std::path::Path;

/// Sparse targets: each entry is 0 with probability `spike_prob`, otherwise a
/// standard Gaussian resampled until its magnitude is at least `trunc`.
pub fn gen_sparse_targets(
    n: usize,
    d: usize,
    spike_prob: f64,
    trunc: f64,
    rng: &mut ChaCha12Rng,
) -> Mat {
    assert!((0.0..=1.0).contains(&spike_prob), "spike probability {spike_prob}");
    Mat::from_fn(n, d, |_, _| {
        if rng::uniform(rng) < spike_prob {
            0.0
        } else {
            loop {
                let z = rng::gauss(rng);
                if z.abs() >= trunc {
                    break z;
                }
            }
        }
    })
}

/// Design matrix with i.i.d. standard Gaussian entries (no column scaling).
pub fn gen_design(k: usize, d: usize, rng: &mut ChaCha12Rng) -> Mat {
    Mat::from_fn(k, d, |_, _| rng::gauss(rng))
}

/// Observations `y = X beta + noise` row by row; `noise_sd = 0` yields exact
/// products.
pub fn gen_observations(x: &Mat, targets: &Mat, noise_sd: f64, rng: &mut ChaCha12Rng) -> Mat {
    assert_eq!(x.cols(), targets.cols(), "design/target dimension mismatch");
    let n = targets.rows();
    let k = x.rows();
    let mut y = Mat::zeros(n, k);
    for i in 0..n {
        let clean = x.matvec(targets.row(i));
        let row = y.row_mut(i);
        for (out, c) in row.iter_mut().zip(clean) {
            *out = if noise_sd == 0.0 { c } else { c + noise_sd * rng::gauss(rng) };
        }
    }
    y
}

/// Generation parameters recorded alongside a synthetic dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthMeta {
    pub d: usize,
    pub k: usize,
    pub noise_sd: f64,
    pub spike_prob: f64,
    pub trunc: f64,
    pub seed: u64,
}

/// One experiment's data: design matrix plus train and test splits.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub x: Mat,
    pub y_train: Mat,
    pub b_train: Mat,
    pub y_test: Mat,
    pub b_test: Mat,
    pub meta: SynthMeta,
}

/// Builds a full synthetic problem from a seed. Train and test splits use
/// separate generator streams, so their contents do not depend on the split
/// sizes of the other.
pub fn synth_problem(
    d: usize,
    k: usize,
    n_train: usize,
    n_test: usize,
    noise_sd: f64,
    spike_prob: f64,
    trunc: f64,
    seed: u64,
) -> SynthData {
    let x = gen_design(k, d, &mut rng::seeded(seed, stream::DESIGN));
    let b_train =
        gen_sparse_targets(n_train, d, spike_prob, trunc, &mut rng::seeded(seed, stream::TRAIN_TARGETS));
    let y_train =
        gen_observations(&x, &b_train, noise_sd, &mut rng::seeded(seed, stream::TRAIN_NOISE));
    let b_test =
        gen_sparse_targets(n_test, d, spike_prob, trunc, &mut rng::seeded(seed, stream::TEST_TARGETS));
    let y_test =
        gen_observations(&x, &b_test, noise_sd, &mut rng::seeded(seed, stream::TEST_NOISE));
    SynthData {
        x,
        y_train,
        b_train,
        y_test,
        b_test,
        meta: SynthMeta { d, k, noise_sd, spike_prob, trunc, seed },
    }
}

const CACHE_MAGIC: &[u8; 5] = b"SSLD1";

/// A persisted `(X, Y, B)` triple.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Design matrix, K x D.
    pub x: Mat,
    /// Observations, N x K.
    pub y: Mat,
    /// Targets, N x D.
    pub b: Mat,
}

/// Writes the flat binary cache layout: magic `SSLD1`, then `K`, `D`, `N` as
/// little-endian u64, then row-major little-endian f64 payloads `X`, `Y`, `B`.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let k = ds.x.rows();
    let d = ds.x.cols();
    let n = ds.y.rows();
    assert_eq!(ds.y.cols(), k, "observation width mismatch");
    assert_eq!(ds.b.rows(), n, "target count mismatch");
    assert_eq!(ds.b.cols(), d, "target width mismatch");

    let mut buf = Vec::with_capacity(5 + 24 + 8 * (k * d + n * k + n * d));
    buf.extend_from_slice(CACHE_MAGIC);
    for dim in [k as u64, d as u64, n as u64] {
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    for mat in [&ds.x, &ds.y, &ds.b] {
        for &v in mat.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    file.write_all(&buf).map_err(|e| DataError::io(path, e))
}

/// Reads the cache layout written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.len() < 29 {
        return Err(DataError::Truncated { expected: 29, found: bytes.len() });
    }
    if &bytes[..5] != CACHE_MAGIC {
        return Err(DataError::BadMagic {
            expected: format!("{:?}", core::str::from_utf8(CACHE_MAGIC).unwrap()),
            found: format!("{:02x?}", &bytes[..5]),
        });
    }
    let mut dims = [0u64; 3];
    for (i, dim) in dims.iter_mut().enumerate() {
        *dim = u64::from_le_bytes(bytes[5 + 8 * i..13 + 8 * i].try_into().unwrap());
    }
    let (k, d, n) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let expected = 29 + 8 * (k * d + n * k + n * d);
    if bytes.len() != expected {
        return Err(DataError::Truncated { expected, found: bytes.len() });
    }
    let mut offset = 29;
    let mut read_mat = |rows: usize, cols: usize| -> Mat {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap()));
            offset += 8;
        }
        Mat::from_vec(rows, cols, data)
    };
    let x = read_mat(k, d);
    let y = read_mat(n, k);
    let b = read_mat(n, d);
    Ok(Dataset { x, y, b })
}

/// Stream id for the stand-in image corpus.
const IMAGE_STREAM: u64 = 0x4000;

/// Deterministic stand-in corpus of sparse 28x28 images in `[0, 1]`, for
/// running the image experiments when no dataset file is available. Each
/// image is a few random strokes stamped onto an empty canvas, giving
/// sparsity comparable to handwritten digits.
pub fn synthetic_images(n: usize, seed: u64) -> Mat {
    let mut r = rng::seeded(seed, IMAGE_STREAM);
    let mut images = Mat::zeros(n, 784);
    for img in 0..n {
        let row = images.row_mut(img);
        let strokes = 2 + rng::below(&mut r, 3);
        for _ in 0..strokes {
            let mut x = 4 + rng::below(&mut r, 20) as i32;
            let mut y = 4 + rng::below(&mut r, 20) as i32;
            let steps = 20 + rng::below(&mut r, 40);
            for _ in 0..steps {
                let intensity = 0.4 + 0.6 * rng::uniform(&mut r);
                for (dx, dy, w) in [(0, 0, 1.0), (1, 0, 0.6), (0, 1, 0.6)] {
                    let (px, py) = (x + dx, y + dy);
                    if (0..28).contains(&px) && (0..28).contains(&py) {
                        let idx = (py * 28 + px) as usize;
                        row[idx] = (row[idx] + w * intensity).min(1.0);
                    }
                }
                match rng::below(&mut r, 4) {
                    0 => x += 1,
                    1 => x -= 1,
                    2 => y += 1,
                    _ => y -= 1,
                }
                x = x.clamp(0, 27);
                y = y.clamp(0, 27);
            }
        }
    }
    images
}
