//! Central finite-difference checks of tape gradients.

use super::{Bound, ParamStore, Tape, Var};
use crate::error::Result;
use crate::rng::CounterRng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the probed
    /// coordinates; zero when both vanish.
    pub rel_err: f64,
    /// `‖analytic − numeric‖`, for judging gradients that vanish.
    pub abs_err: f64,
    pub analytic_norm: f64,
    pub probed: usize,
}

/// Compares the tape gradient of `loss` against central differences with
/// step `h` for every parameter accepted by `select`. At most `max_coords`
/// coordinates per tensor are probed, chosen by a seeded RNG.
pub fn check_gradients(
    params: &ParamStore<f64>,
    select: impl Fn(&str) -> bool,
    loss: impl Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
    h: f64,
    max_coords: usize,
) -> Result<Vec<GradReport>> {
    let eval = |p: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        tape.set_check_finite(false);
        let b = tape.bind(p, |_| false);
        let l = loss(&mut tape, &b)?;
        Ok(tape.value(l).item())
    };
    let mut tape = Tape::new();
    tape.set_check_finite(false);
    let bound = tape.bind(params, &select);
    let l = loss(&mut tape, &bound)?;
    let grads = tape.backward(l)?.collect(&bound, params, &select);
    let mut rng = CounterRng::new(0x6AD);
    let mut reports = Vec::new();
    let mut work = params.clone();
    for name in params.names().filter(|n| select(n)) {
        let g = &grads[name];
        let n = g.numel();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > max_coords {
            rng.shuffle(&mut coords);
            coords.truncate(max_coords);
        }
        let (mut diff, mut an, mut nn) = (0.0, 0.0, 0.0);
        for &i in &coords {
            let orig = work.require(name)?.data()[i];
            work.get_mut(name).expect("present").data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work.get_mut(name).expect("present").data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work.get_mut(name).expect("present").data_mut()[i] = orig;
            let num = (up - down) / (2.0 * h);
            let a = g.data()[i];
            diff += (a - num) * (a - num);
            an += a * a;
            nn += num * num;
        }
        let denom = an.sqrt().max(nn.sqrt());
        let rel_err = if denom == 0.0 { 0.0 } else { diff.sqrt() / denom };
        reports.push(GradReport { name: name.clone(), rel_err, abs_err: diff.sqrt(), analytic_norm: an.sqrt(), probed: coords.len() });
    }
    Ok(reports)
}
