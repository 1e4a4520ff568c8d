//! Isotropic total variation and its proximal map by Chambolle's dual
//! projection.

use ndarray::{Array2, Zip};

/// Forward differences with a zero difference past the last row/column.
fn gradient(u: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (nz, nx) = u.dim();
    let mut gz = Array2::zeros((nz, nx));
    let mut gx = Array2::zeros((nz, nx));
    for r in 0..nz {
        for c in 0..nx {
            if r + 1 < nz {
                gz[[r, c]] = u[[r + 1, c]] - u[[r, c]];
            }
            if c + 1 < nx {
                gx[[r, c]] = u[[r, c + 1]] - u[[r, c]];
            }
        }
    }
    (gz, gx)
}

/// Negative adjoint of [`gradient`].
fn divergence(pz: &Array2<f64>, px: &Array2<f64>) -> Array2<f64> {
    let (nz, nx) = pz.dim();
    Array2::from_shape_fn((nz, nx), |(r, c)| {
        let dz = match r {
            0 => pz[[0, c]],
            _ if r + 1 == nz => -pz[[r - 1, c]],
            _ => pz[[r, c]] - pz[[r - 1, c]],
        };
        let dx = match c {
            0 => px[[r, 0]],
            _ if c + 1 == nx => -px[[r, c - 1]],
            _ => px[[r, c]] - px[[r, c - 1]],
        };
        // one-pixel axes have no differences at all
        (if nz > 1 { dz } else { 0.0 }) + (if nx > 1 { dx } else { 0.0 })
    })
}

pub fn total_variation(u: &Array2<f64>) -> f64 {
    let (gz, gx) = gradient(u);
    gz.iter()
        .zip(gx.iter())
        .map(|(a, b)| (a * a + b * b).sqrt())
        .sum()
}

/// Dual variable of the TV prox, kept between calls as a warm start.
#[derive(Debug, Clone)]
pub struct TvDual {
    pz: Array2<f64>,
    px: Array2<f64>,
}

impl TvDual {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            pz: Array2::zeros(shape),
            px: Array2::zeros(shape),
        }
    }
}

/// Approximates `argmin_u 1/2 |u - f|^2 + weight TV(u)` with `iterations`
/// dual steps of size 1/8.
pub fn tv_prox(f: &Array2<f64>, weight: f64, iterations: usize, dual: &mut TvDual) -> Array2<f64> {
    if weight <= 0.0 {
        return f.clone();
    }
    const STEP: f64 = 0.125;
    for _ in 0..iterations {
        let g = divergence(&dual.pz, &dual.px) - f / weight;
        let (gz, gx) = gradient(&g);
        Zip::from(&mut dual.pz)
            .and(&mut dual.px)
            .and(&gz)
            .and(&gx)
            .for_each(|pz, px, &a, &b| {
                let denom = 1.0 + STEP * (a * a + b * b).sqrt();
                *pz = (*pz + STEP * a) / denom;
                *px = (*px + STEP * b) / denom;
            });
    }
    f - &(divergence(&dual.pz, &dual.px) * weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn divergence_is_the_negative_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rand = |s| Array2::from_shape_fn(s, |_| rng.random_range(-1.0..1.0));
        let u = rand((7, 5));
        let (pz, px) = (rand((7, 5)), rand((7, 5)));
        let (gz, gx) = gradient(&u);
        let lhs: f64 = (&gz * &pz).sum() + (&gx * &px).sum();
        let rhs: f64 = -(&u * &divergence(&pz, &px)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn step_edge_variation() {
        let u = array![[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        assert!((total_variation(&u) - 2.0).abs() < 1e-15);
        assert_eq!(total_variation(&Array2::from_elem((4, 4), 3.0)), 0.0);
    }

    #[test]
    fn prox_reduces_the_regularized_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..1.0));
        let w = 0.1;
        let mut dual = TvDual::zeros(f.dim());
        let u = tv_prox(&f, w, 50, &mut dual);
        let obj = |u: &Array2<f64>| 0.5 * (u - &f).mapv(|v| v * v).sum() + w * total_variation(u);
        assert!(obj(&u) < obj(&f));
        assert!(total_variation(&u) < total_variation(&f));
        // the mean is preserved because div p sums to zero
        assert!((u.mean().unwrap() - f.mean().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_is_identity() {
        let f = array![[1.0, -2.0], [0.5, 3.0]];
        assert_eq!(tv_prox(&f, 0.0, 10, &mut TvDual::zeros((2, 2))), f);
    }
}
