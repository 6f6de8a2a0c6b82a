//! Finite differences on (possibly nonuniform) grids.
//!
//! Interior points use three-point stencils; the two end points use
//! second-order one-sided stencils (three points for the first derivative,
//! four for the second). Weights come from Fornberg's recursion.

/// Fornberg weights for derivatives `0..=max_order` at `z` on `nodes`.
/// Returns `w[k][j]`: weight of node `j` for derivative order `k`.
pub fn fornberg_weights(z: f64, nodes: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Stencil index range used for derivative `order` (1 or 2) at point `i`.
fn stencil(i: usize, n: usize, order: usize) -> std::ops::Range<usize> {
    let width = if order == 1 { 3 } else { 4 };
    if i == 0 {
        0..width
    } else if i == n - 1 {
        n - width..n
    } else {
        i - 1..i + 2
    }
}

fn derivative(grid: &[f64], values: &[f64], order: usize) -> Vec<f64> {
    let n = grid.len();
    debug_assert!(n >= 4 && values.len() == n);
    (0..n)
        .map(|i| {
            let idx = stencil(i, n, order);
            let w = fornberg_weights(grid[i], &grid[idx.clone()], order);
            idx.zip(&w[order]).map(|(j, wj)| wj * values[j]).sum()
        })
        .collect()
}

pub fn first_derivative(grid: &[f64], values: &[f64]) -> Vec<f64> {
    derivative(grid, values, 1)
}

pub fn second_derivative(grid: &[f64], values: &[f64]) -> Vec<f64> {
    derivative(grid, values, 2)
}

/// Leading truncation coefficient of [`first_derivative`] at each point:
/// `φ' - Dφ ≈ coef · φ'''`.
pub fn first_derivative_error_coefficients(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    (0..n)
        .map(|i| {
            let prod: f64 = stencil(i, n, 1).filter(|&j| j != i).map(|j| grid[i] - grid[j]).product();
            prod / 6.0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn classic_central_weights() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(w[1], vec![-0.5, 0.0, 0.5]);
        assert_eq!(w[2], vec![1.0, -2.0, 1.0]);
    }

    #[test]
    fn quadratic_derivatives_on_uniform_grid() {
        let g = uniform(0.1, 20.0, 400);
        let v: Vec<f64> = g.iter().map(|x| x * x).collect();
        let d1 = first_derivative(&g, &v);
        let d2 = second_derivative(&g, &v);
        for (i, x) in g.iter().enumerate() {
            assert!((d1[i] - 2.0 * x).abs() < 1e-8, "d1 at {x}: {}", d1[i]);
            assert!((d2[i] - 2.0).abs() < 1e-8, "d2 at {x}: {}", d2[i]);
        }
    }

    #[test]
    fn nonuniform_first_derivative_is_second_order() {
        let errs: Vec<f64> = [100usize, 200, 400]
            .iter()
            .map(|&n| {
                let g: Vec<f64> = (0..n).map(|i| 1.0 + ((i as f64) / (n - 1) as f64).powi(2) * 3.0).collect();
                let v: Vec<f64> = g.iter().map(|x| x.sin()).collect();
                let d1 = first_derivative(&g, &v);
                g.iter().zip(&d1).map(|(x, d)| (d - x.cos()).abs()).fold(0.0, f64::max)
            })
            .collect();
        let order = (errs[1] / errs[2]).log2();
        assert!(order > 1.8, "observed order {order}, errors {errs:?}");
    }

    #[test]
    fn error_coefficients_match_uniform_formulae() {
        let g = uniform(0.0, 1.0, 11);
        let c = first_derivative_error_coefficients(&g);
        let h: f64 = 0.1;
        assert!((c[0] - h * h / 3.0).abs() < 1e-15);
        assert!((c[5] + h * h / 6.0).abs() < 1e-15);
        // a cubic isolates the leading term exactly
        let v: Vec<f64> = g.iter().map(|x| x * x * x).collect();
        let d1 = first_derivative(&g, &v);
        for i in 0..g.len() {
            let err = d1[i] - 3.0 * g[i] * g[i];
            assert!((err + c[i] * 6.0).abs() < 1e-12, "i={i} err={err} coef={}", c[i]);
        }
    }
}
