//! Principal component band reduction.

use super::{DataError, HsiCube};

/// Top principal axes of the band covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `C × K`, row-major; rows are orthonormal principal axes.
    components: Vec<f64>,
    explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn new(mean: Vec<f64>, components: Vec<f64>, explained_variance: Vec<f64>) -> Result<Self, DataError> {
        let k = mean.len();
        let c = explained_variance.len();
        if k == 0 || c == 0 || components.len() != c * k {
            return Err(DataError::Config(format!(
                "PCA model with {k} bands, {c} components and {} weights",
                components.len()
            )));
        }
        Ok(Self {
            mean,
            components,
            explained_variance,
        })
    }

    /// Input band count.
    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    /// Output component count.
    pub fn n_components(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let k = self.bands();
        &self.components[i * k..(i + 1) * k]
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// `components · (x − mean)`
    pub fn project(&self, spectrum: &[f64]) -> Vec<f64> {
        (0..self.n_components())
            .map(|i| {
                self.component(i)
                    .iter()
                    .zip(spectrum.iter().zip(&self.mean))
                    .map(|(w, (x, m))| w * (x - m))
                    .sum()
            })
            .collect()
    }

    /// `mean + componentsᵀ · z`
    pub fn back_project(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (i, &z) in scores.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.component(i)) {
                *o += w * z;
            }
        }
        out
    }
}

/// Fits PCA on every pixel of the cube (labeled or not), using the sample
/// covariance (`n − 1` denominator) and a Jacobi eigensolve.
pub fn fit_pca(cube: &HsiCube, components: usize) -> Result<PcaModel, DataError> {
    let k = cube.bands();
    if components == 0 || components > k {
        return Err(DataError::Config(format!(
            "cannot keep {components} components of a {k}-band cube"
        )));
    }
    let pixels = cube.width() * cube.height();
    if pixels < components + 1 {
        return Err(DataError::Config(format!(
            "PCA with {components} components needs at least {} pixels, cube has {pixels}",
            components + 1
        )));
    }
    let raster = cube.raster();
    let mean: Vec<f64> = (0..k)
        .map(|b| raster[b * pixels..(b + 1) * pixels].iter().sum::<f64>() / pixels as f64)
        .collect();
    let mut cov = vec![0.0; k * k];
    for i in 0..k {
        let bi = &raster[i * pixels..(i + 1) * pixels];
        for j in i..k {
            let bj = &raster[j * pixels..(j + 1) * pixels];
            let s: f64 = bi.iter().zip(bj).map(|(x, y)| (x - mean[i]) * (y - mean[j])).sum();
            let v = s / (pixels - 1) as f64;
            cov[i * k + j] = v;
            cov[j * k + i] = v;
        }
    }
    let (values, vectors) = jacobi_eigen(&cov, k);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut comps = Vec::with_capacity(components * k);
    let mut explained = Vec::with_capacity(components);
    for &col in order.iter().take(components) {
        let mut axis: Vec<f64> = (0..k).map(|r| vectors[r * k + col]).collect();
        let pivot = axis
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > axis[best].abs() { i } else { best });
        if axis[pivot] < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        comps.extend(axis);
        explained.push(values[col].max(0.0));
    }
    PcaModel::new(mean, comps, explained)
}

/// Projects every pixel spectrum onto the model's components.
pub fn apply_pca(cube: &HsiCube, model: &PcaModel) -> Result<HsiCube, DataError> {
    if cube.bands() != model.bands() {
        return Err(DataError::BandMismatch {
            expected: model.bands(),
            found: cube.bands(),
        });
    }
    let pixels = cube.width() * cube.height();
    let c = model.n_components();
    let mut raster = vec![0.0; c * pixels];
    let src = cube.raster();
    let k = cube.bands();
    let mut spectrum = vec![0.0; k];
    for p in 0..pixels {
        for (b, s) in spectrum.iter_mut().enumerate() {
            *s = src[b * pixels + p];
        }
        for (i, z) in model.project(&spectrum).into_iter().enumerate() {
            raster[i * pixels + p] = z;
        }
    }
    cube.with_raster(c, raster)
}

/// Cyclic Jacobi eigendecomposition of a symmetric `n × n` matrix.
///
/// Returns eigenvalues (unsorted) and the eigenvector matrix whose columns
/// pair with them.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    const MAX_SWEEPS: usize = 100;
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes_small_symmetric_matrix() {
        let m = [4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 5.0];
        let (vals, vecs) = jacobi_eigen(&m, 3);
        for j in 0..3 {
            let col: Vec<f64> = (0..3).map(|r| vecs[r * 3 + j]).collect();
            for r in 0..3 {
                let mv: f64 = (0..3).map(|c| m[r * 3 + c] * col[c]).sum();
                assert!((mv - vals[j] * col[r]).abs() < 1e-12);
            }
        }
        let trace: f64 = vals.iter().sum();
        assert!((trace - 12.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_components_is_config_error() {
        let cube = HsiCube::new(2, 2, 2, vec![0.0; 8], vec![0; 4], None).unwrap();
        assert!(matches!(fit_pca(&cube, 3), Err(DataError::Config(_))));
    }

    #[test]
    fn band_mismatch_rejected() {
        let cube = HsiCube::new(2, 2, 2, vec![0.0; 8], vec![0; 4], None).unwrap();
        let model = PcaModel::new(vec![0.0; 3], vec![1.0, 0.0, 0.0], vec![1.0]).unwrap();
        assert!(matches!(apply_pca(&cube, &model), Err(DataError::BandMismatch { .. })));
    }
}
