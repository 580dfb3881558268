//! Small least-squares helpers for rate and coefficient fits.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("insufficient data: {got} samples, need at least {need}")]
    InsufficientData { got: usize, need: usize },
    #[error("degenerate design matrix")]
    Degenerate,
}

/// Straight-line fit `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn line_fit(x: &[f64], y: &[f64]) -> Result<LineFit, FitError> {
    let n = x.len().min(y.len());
    if n < 2 {
        return Err(FitError::InsufficientData { got: n, need: 2 });
    }
    let nf = n as f64;
    let mx = x[..n].iter().sum::<f64>() / nf;
    let my = y[..n].iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(FitError::Degenerate);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Least squares `min ‖A c − y‖` for a row-major design matrix, solved by
/// Householder QR.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>, FitError> {
    let m = rows.len();
    let n = rows.first().map_or(0, |r| r.len());
    if m < n || n == 0 {
        return Err(FitError::InsufficientData {
            got: m,
            need: n.max(1),
        });
    }
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let mut b = y.to_vec();
    for col in 0..n {
        let norm = (col..m).map(|r| a[r][col] * a[r][col]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(FitError::Degenerate);
        }
        let alpha = if a[col][col] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (col..m).map(|r| a[r][col]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in col..n {
            let dot: f64 = (col..m).map(|r| v[r - col] * a[r][c]).sum();
            let f = 2.0 * dot / vnorm2;
            for r in col..m {
                a[r][c] -= f * v[r - col];
            }
        }
        let dot: f64 = (col..m).map(|r| v[r - col] * b[r]).sum();
        let f = 2.0 * dot / vnorm2;
        for r in col..m {
            b[r] -= f * v[r - col];
        }
    }
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        if a[i][i].abs() <= 1e-13 * scale {
            return Err(FitError::Degenerate);
        }
        let s: f64 = (i + 1..n).map(|c| a[i][c] * x[c]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| -2.0 / 3.0 * v + 1.5).collect();
        let f = line_fit(&x, &y).unwrap();
        assert!((f.slope + 2.0 / 3.0).abs() < 1e-14);
        assert!((f.intercept - 1.5).abs() < 1e-13);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(line_fit(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn least_squares_recovers_coefficients() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 / 7.0;
                vec![1.0, t, t * t, t.sin()]
            })
            .collect();
        let c = [0.3, -1.2, 0.05, 2.0];
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&c).map(|(a, b)| a * b).sum())
            .collect();
        let got = least_squares(&rows, &y).unwrap();
        for (g, e) in got.iter().zip(&c) {
            assert!((g - e).abs() < 1e-10);
        }
        let collinear: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        assert_eq!(
            least_squares(&collinear, &[0.0; 5]),
            Err(FitError::Degenerate)
        );
    }
}
