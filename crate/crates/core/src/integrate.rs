//! Height recovery from a gradient field.
//!
//! The height field minimizes `sum_e (u_b - u_a - h g_e)^2` over all grid
//! edges `a -> b`, where `g_e` is the trapezoidal average of the node
//! gradients at both ends. Its normal equations are the 5-point Neumann
//! Poisson problem `L u = div g`, with the divergence reducing to centred
//! differences in the interior and one-sided sums on the boundary. The
//! Neumann Laplacian is diagonal in the DCT-II basis, so the solve is two
//! separable transforms and a pointwise division. The trapezoidal rule makes
//! the recovery exact for every quadratic height field.

use nalgebra::DVector;
use rustdct::DctPlanner;

use crate::error::{PsError, Result};
use crate::model::{GradientField, GridSpec, NormalAlbedoField, SurfaceGrid};

/// Normals with a third component below this are masked out.
pub const GRAZING_TOLERANCE: f64 = 1e-6;

/// `u_x = -n1 / n3`, `u_y = -n2 / n3`; grazing normals get a zero gradient and
/// `true` in the returned mask.
pub fn gradients_from_normals(field: &NormalAlbedoField) -> (GradientField, Vec<bool>) {
    let p = field.p();
    let mut g = GradientField::zeros(p);
    let mut mask = vec![false; p];
    for (k, n) in field.normals().column_iter().enumerate() {
        if n[2] < GRAZING_TOLERANCE {
            mask[k] = true;
        } else {
            g.ux[k] = -n[0] / n[2];
            g.uy[k] = -n[1] / n[2];
        }
    }
    (g, mask)
}

/// Zero-mean least-squares height field for the gradient `g` on `spec`.
pub fn integrate_poisson(g: &GradientField, spec: &GridSpec) -> Result<SurfaceGrid> {
    let (nx, ny) = (spec.nx(), spec.ny());
    if nx < 3 || ny < 3 {
        return Err(PsError::InvalidSpec(format!("grid {nx}x{ny} is smaller than 3x3")));
    }
    if g.len() != spec.node_count() {
        return Err(PsError::Shape(format!(
            "gradient has {} nodes, grid has {}",
            g.len(),
            spec.node_count()
        )));
    }
    let h = spec.spacing();
    let idx = |i: usize, j: usize| i * ny + j;

    // b = D^T d, with d the edge targets h * (g_a + g_b) / 2
    let mut rhs = vec![0.0; nx * ny];
    for i in 0..nx - 1 {
        for j in 0..ny {
            let d = 0.5 * h * (g.ux[idx(i, j)] + g.ux[idx(i + 1, j)]);
            rhs[idx(i, j)] -= d;
            rhs[idx(i + 1, j)] += d;
        }
    }
    for i in 0..nx {
        for j in 0..ny - 1 {
            let d = 0.5 * h * (g.uy[idx(i, j)] + g.uy[idx(i, j + 1)]);
            rhs[idx(i, j)] -= d;
            rhs[idx(i, j + 1)] += d;
        }
    }

    let mut planner = DctPlanner::new();
    dct_2d(&mut planner, &mut rhs, nx, ny, Direction::Forward);
    let ex: Vec<f64> = (0..nx).map(|k| path_eigenvalue(k, nx)).collect();
    let ey: Vec<f64> = (0..ny).map(|l| path_eigenvalue(l, ny)).collect();
    for k in 0..nx {
        for l in 0..ny {
            let lambda = ex[k] + ey[l];
            rhs[idx(k, l)] = if k == 0 && l == 0 { 0.0 } else { rhs[idx(k, l)] / lambda };
        }
    }
    dct_2d(&mut planner, &mut rhs, nx, ny, Direction::Inverse);

    let mut heights = DVector::from_vec(rhs);
    let mean = heights.mean();
    heights.add_scalar_mut(-mean);
    SurfaceGrid::new(*spec, heights)
}

/// Eigenvalue of the Neumann path-graph Laplacian on `n` nodes.
fn path_eigenvalue(k: usize, n: usize) -> f64 {
    2.0 - 2.0 * (std::f64::consts::PI * k as f64 / n as f64).cos()
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Inverse,
}

/// Separable DCT-II (forward) or its exact inverse over a row-major
/// `nx x ny` array (the `j` index is contiguous).
fn dct_2d(planner: &mut DctPlanner<f64>, data: &mut [f64], nx: usize, ny: usize, dir: Direction) {
    let along_j = planner.plan_dct2(ny);
    let along_j_inv = planner.plan_dct3(ny);
    for row in data.chunks_exact_mut(ny) {
        match dir {
            Direction::Forward => along_j.process_dct2(row),
            Direction::Inverse => {
                along_j_inv.process_dct3(row);
                let scale = 2.0 / ny as f64;
                row.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    let along_i = planner.plan_dct2(nx);
    let along_i_inv = planner.plan_dct3(nx);
    let mut column = vec![0.0; nx];
    for j in 0..ny {
        for i in 0..nx {
            column[i] = data[i * ny + j];
        }
        match dir {
            Direction::Forward => along_i.process_dct2(&mut column),
            Direction::Inverse => {
                along_i_inv.process_dct3(&mut column);
                let scale = 2.0 / nx as f64;
                column.iter_mut().for_each(|v| *v *= scale);
            }
        }
        for i in 0..nx {
            data[i * ny + j] = column[i];
        }
    }
}

/// `|u - ref|_inf / |ref|_inf` after removing the mean of both fields.
pub fn relative_error_inf(u: &SurfaceGrid, reference: &SurfaceGrid) -> Result<f64> {
    if u.heights().len() != reference.heights().len() || u.spec() != reference.spec() {
        return Err(PsError::Shape("surfaces live on different grids".into()));
    }
    let centred_ref = reference.heights().add_scalar(-reference.mean());
    let denom = centred_ref.amax();
    if denom == 0.0 {
        return Err(PsError::UndefinedMetric);
    }
    let centred_u = u.heights().add_scalar(-u.mean());
    Ok((centred_u - centred_ref).amax() / denom)
}
