use alloc::format;
use alloc::vec::Vec;

use super::spectral::SpectralGrid;
use super::{GridSpec, Trajectory};
use crate::error::{Error, Result};
use crate::fft::C64;
use crate::tensor::Tensor;

/// Stops a run once the solution magnitude exceeds this.
const BLOW_UP: f64 = 1e6;

fn check_field(spec: &GridSpec, u: &Tensor, what: &str) -> Result<()> {
    let ok = u.shape() == spec.points.as_slice() || u.shape() == spec.field_shape(1).as_slice();
    if !ok {
        return Err(Error::invalid_shape(
            "solver",
            format!("{what} has shape {:?}, grid is {:?}", u.shape(), spec.points),
        ));
    }
    if !u.is_finite() {
        return Err(Error::InvalidArgument(format!("{what} contains non-finite values")));
    }
    Ok(())
}

fn check_velocity(spec: &GridSpec, c: &[f64]) -> Result<()> {
    if c.len() != spec.dims() || c.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "velocity {:?} needs one finite component per axis",
            c
        )));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} = {v} must be positive")));
    }
    Ok(())
}

fn frame(spec: &GridSpec, channels: &[&[f64]]) -> Tensor {
    let data: Vec<f64> = channels.iter().flat_map(|c| c.iter().copied()).collect();
    Tensor::new(&spec.field_shape(channels.len()), data).expect("grid sized channels")
}

/// Runs a linear constant-coefficient problem whose exact one-step
/// propagator is `factor`.
fn propagate(spec: &GridSpec, grid: &SpectralGrid, u0: &Tensor, factor: &[C64]) -> Trajectory {
    let mut hat = grid.forward(u0.data());
    let mut traj = Trajectory::start(frame(spec, &[u0.data()]));
    for step in 1..=spec.steps {
        for (h, f) in hat.iter_mut().zip(factor) {
            *h *= f;
        }
        traj.record(spec, step, || frame(spec, &[&grid.inverse(&hat)]));
    }
    traj
}

/// `u_t + c·∇u = 0`, each mode rotated by `exp(-i k·c dt)` per step.
pub fn solve_advection(u0: &Tensor, velocity: &[f64], spec: &GridSpec) -> Result<Trajectory> {
    spec.validate()?;
    check_field(spec, u0, "u0")?;
    check_velocity(spec, velocity)?;
    if velocity.iter().all(|&c| c == 0.0) {
        let mut traj = Trajectory::start(frame(spec, &[u0.data()]));
        for step in 1..=spec.steps {
            traj.record(spec, step, || frame(spec, &[u0.data()]));
        }
        return Ok(traj);
    }
    let grid = SpectralGrid::new(spec)?;
    Ok(propagate(spec, &grid, u0, &grid.transport_factor(velocity, 0.0, spec.dt)))
}

/// `u_t = ν ∇²u` with the exact integrating factor `exp(-ν|k|² dt)`.
pub fn solve_heat(u0: &Tensor, nu: f64, spec: &GridSpec) -> Result<Trajectory> {
    spec.validate()?;
    check_field(spec, u0, "u0")?;
    positive("nu", nu)?;
    let grid = SpectralGrid::new(spec)?;
    let zero = alloc::vec![0.0; spec.dims()];
    Ok(propagate(spec, &grid, u0, &grid.transport_factor(&zero, nu, spec.dt)))
}

/// `u_t + c·∇u = ν ∇²u`: an exact advection step followed by an exact
/// diffusion step each `dt`. Both operators are diagonal in Fourier space,
/// so the split is exact and the two steps fuse into one factor.
pub fn solve_heat_convection(u0: &Tensor, nu: f64, velocity: &[f64], spec: &GridSpec) -> Result<Trajectory> {
    spec.validate()?;
    check_field(spec, u0, "u0")?;
    positive("nu", nu)?;
    check_velocity(spec, velocity)?;
    let grid = SpectralGrid::new(spec)?;
    Ok(propagate(spec, &grid, u0, &grid.transport_factor(velocity, nu, spec.dt)))
}

/// Viscous Burgers `u_t + (u²/2)_x = ν u_xx` in 1-D.
///
/// Fourth-order Runge-Kutta on the integrating-factor form, so viscosity
/// imposes no step restriction. The quadratic flux is dealiased with the
/// two-thirds rule. The step must satisfy `dt · max|u0| · k_max ≤ 2`
/// with `k_max` the largest retained wavenumber; the maximum principle
/// keeps `max|u|` from growing afterwards.
pub fn solve_burgers(u0: &Tensor, nu: f64, spec: &GridSpec) -> Result<Trajectory> {
    spec.validate()?;
    if spec.dims() != 1 {
        return Err(Error::InvalidArgument("burgers is solved in 1-D only".into()));
    }
    check_field(spec, u0, "u0")?;
    positive("nu", nu)?;
    let grid = SpectralGrid::new(spec)?;
    let umax = u0.max_abs();
    let cfl = spec.dt * umax * grid.dealiased_k_max();
    if cfl > 2.0 {
        return Err(Error::Unstable {
            solver: "burgers",
            detail: format!("dt·max|u|·k_max = {cfl:.3} > 2 (dt = {}, nu = {nu})", spec.dt),
        });
    }

    let n = grid.len();
    let half: Vec<C64> = (0..n)
        .map(|b| C64::new(libm::exp(-0.5 * nu * grid.k_squared(b) * spec.dt), 0.0))
        .collect();
    // -dt · i k / 2
    let g: Vec<C64> = (0..n).map(|b| C64::new(0.0, -0.5 * spec.dt * grid.wavevector(b)[0])).collect();
    let flux = |v: &[C64]| -> Vec<C64> {
        let mut v = v.to_vec();
        grid.dealias(&mut v);
        let u = grid.inverse(&v);
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        let mut f = grid.forward(&sq);
        grid.dealias(&mut f);
        f.iter().zip(&g).map(|(f, g)| f * g).collect()
    };

    let mut v = grid.forward(u0.data());
    let mut traj = Trajectory::start(frame(spec, &[u0.data()]));
    let mut tmp = alloc::vec![C64::new(0.0, 0.0); n];
    for step in 1..=spec.steps {
        let a = flux(&v);
        for i in 0..n {
            tmp[i] = half[i] * (v[i] + a[i] * 0.5);
        }
        let b = flux(&tmp);
        for i in 0..n {
            tmp[i] = half[i] * v[i] + b[i] * 0.5;
        }
        let c = flux(&tmp);
        for i in 0..n {
            tmp[i] = half[i] * half[i] * v[i] + half[i] * c[i];
        }
        let d = flux(&tmp);
        for i in 0..n {
            let e2 = half[i] * half[i];
            v[i] = e2 * v[i] + (e2 * a[i] + half[i] * (b[i] + c[i]) * 2.0 + d[i]) / 6.0;
        }
        let peak = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let u = grid.inverse(&v);
        if !peak.is_finite() || u.iter().any(|x| !x.is_finite() || x.abs() > BLOW_UP) {
            return Err(Error::Diverged {
                solver: "burgers",
                detail: format!("step {step}, nu = {nu}, dt = {}", spec.dt),
            });
        }
        traj.record(spec, step, || frame(spec, &[&u]));
    }
    Ok(traj)
}

/// Gray-Scott coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReactionParams {
    pub du: f64,
    pub dv: f64,
    pub feed: f64,
    pub kill: f64,
}

impl ReactionParams {
    /// Pearson's spot-forming regime on a unit box.
    pub const STANDARD: ReactionParams = ReactionParams {
        du: 2e-5,
        dv: 1e-5,
        feed: 0.04,
        kill: 0.06,
    };

    fn validate(&self, dt: f64) -> Result<()> {
        positive("du", self.du)?;
        positive("dv", self.dv)?;
        if !(self.feed >= 0.0 && self.kill >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "feed {} and kill {} must be non-negative",
                self.feed, self.kill
            )));
        }
        let bound = dt * (self.feed + self.kill);
        if bound > 0.5 {
            return Err(Error::Unstable {
                solver: "gray_scott",
                detail: format!("dt·(F + k) = {bound:.3} > 0.5"),
            });
        }
        Ok(())
    }
}

/// Two-species Gray-Scott system
/// `u_t = Du ∇²u − u v² + F(1 − u)`, `v_t = Dv ∇²v + u v² − (F + k) v`.
///
/// Each step applies an explicit Euler reaction update followed by exact
/// spectral diffusion. Returns frames with channels `(u, v)`.
pub fn solve_gray_scott(u0: &Tensor, v0: &Tensor, params: ReactionParams, spec: &GridSpec) -> Result<Trajectory> {
    let zero = alloc::vec![0.0; spec.points.len()];
    reaction_transport(u0, v0, params, &zero, spec, "gray_scott")
}

/// Gray-Scott with both species carried by a uniform velocity `c`: the
/// reaction update, then an exact advection sub-step, then diffusion.
pub fn solve_rd_advection(
    u0: &Tensor,
    v0: &Tensor,
    params: ReactionParams,
    velocity: &[f64],
    spec: &GridSpec,
) -> Result<Trajectory> {
    reaction_transport(u0, v0, params, velocity, spec, "rd_advection")
}

fn reaction_transport(
    u0: &Tensor,
    v0: &Tensor,
    p: ReactionParams,
    velocity: &[f64],
    spec: &GridSpec,
    solver: &'static str,
) -> Result<Trajectory> {
    spec.validate()?;
    check_field(spec, u0, "u0")?;
    check_field(spec, v0, "v0")?;
    check_velocity(spec, velocity)?;
    p.validate(spec.dt)?;
    let grid = SpectralGrid::new(spec)?;
    let fu = grid.transport_factor(velocity, p.du, spec.dt);
    let fv = grid.transport_factor(velocity, p.dv, spec.dt);
    let dt = spec.dt;

    let mut u = u0.data().to_vec();
    let mut v = v0.data().to_vec();
    let mut traj = Trajectory::start(frame(spec, &[&u, &v]));
    for step in 1..=spec.steps {
        for (a, b) in u.iter_mut().zip(v.iter_mut()) {
            let uvv = *a * *b * *b;
            let du = -uvv + p.feed * (1.0 - *a);
            let dv = uvv - (p.feed + p.kill) * *b;
            *a += dt * du;
            *b += dt * dv;
        }
        u = transport(&grid, &u, &fu);
        v = transport(&grid, &v, &fv);
        if u.iter().chain(&v).any(|x| !x.is_finite() || x.abs() > BLOW_UP) {
            return Err(Error::Diverged {
                solver,
                detail: format!("step {step}, F = {}, k = {}", p.feed, p.kill),
            });
        }
        traj.record(spec, step, || frame(spec, &[&u, &v]));
    }
    Ok(traj)
}

fn transport(grid: &SpectralGrid, x: &[f64], factor: &[C64]) -> Vec<f64> {
    let mut hat = grid.forward(x);
    for (h, f) in hat.iter_mut().zip(factor) {
        *h *= f;
    }
    grid.inverse(&hat)
}
