//! Hydrostatic compensation and normalized head loss.
//!
//! Stations sit at different altitudes, which biases their absolute pressure
//! by a constant `dP = -rho * g * dz`. After removing that bias, the pressure
//! drop between two stations divided by their distance is the head loss in
//! bar/km. Its one-week trailing mean is the long-term trend that deposits
//! push up and pigging pulls back down.

use std::io::Write;

use crate::error::{Error, Result};
use crate::series::{step_to_micros, SegmentMeta, StationMeta, UniformSeries};

pub const PA_PER_BAR: f64 = 1e5;

/// One week, the default smoothing window.
pub const LONG_TERM_WINDOW_S: f64 = 7.0 * 86_400.0;

/// Minimum fraction of present bins for a moving-average output.
pub const MIN_AVERAGE_COVERAGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidProps {
    pub density_kg_m3: f64,
    pub gravity_m_s2: f64,
}

impl Default for FluidProps {
    fn default() -> Self {
        FluidProps {
            density_kg_m3: 900.0,
            gravity_m_s2: 9.81,
        }
    }
}

impl FluidProps {
    pub fn with_density(density_kg_m3: f64) -> Self {
        FluidProps {
            density_kg_m3,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(700.0..=1100.0).contains(&self.density_kg_m3) {
            return Err(Error::invalid(format!(
                "density {} kg/m3 outside [700, 1100]",
                self.density_kg_m3
            )));
        }
        if !(self.gravity_m_s2 > 0.0) {
            return Err(Error::invalid("gravity must be positive"));
        }
        Ok(())
    }
}

/// Pressure differential in pascals for an altitude rise of `dz_m` metres.
pub fn hydrostatic_dp(f: &FluidProps, dz_m: f64) -> f64 {
    -f.density_kg_m3 * f.gravity_m_s2 * dz_m
}

/// Altitude offset of one station relative to the reference station.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensationEntry {
    pub station: String,
    pub dz_m: f64,
    pub dp_pa: f64,
}

impl CompensationEntry {
    pub fn dp_bar(&self) -> f64 {
        self.dp_pa / PA_PER_BAR
    }
}

/// Compensation table for every station against the chainage-0 station.
pub fn compensation_table(stations: &[StationMeta], fluid: &FluidProps) -> Result<Vec<CompensationEntry>> {
    crate::series::validate_stations(stations)?;
    fluid.validate()?;
    let reference = crate::series::reference_station(stations).expect("validated");
    Ok(stations
        .iter()
        .map(|s| {
            let dz_m = s.altitude_m - reference.altitude_m;
            CompensationEntry {
                station: s.id.clone(),
                dz_m,
                dp_pa: hydrostatic_dp(fluid, dz_m),
            }
        })
        .collect())
}

/// Removes the altitude bias: every present value `v` becomes `v - dp/1e5`.
pub fn compensate(u: &UniformSeries, dp_pa: f64) -> UniformSeries {
    let dp_bar = dp_pa / PA_PER_BAR;
    u.map_present(|v| v - dp_bar)
}

/// Pressure drop per kilometre, `(up - down) / length`.
///
/// Both inputs must share step and bin phase; the output covers the span
/// where they overlap and is missing wherever either side is missing.
pub fn head_loss(up: &UniformSeries, down: &UniformSeries, seg: &SegmentMeta) -> Result<UniformSeries> {
    if !(seg.length_km > 0.0) {
        return Err(Error::invalid(format!("segment {} has no length", seg.name())));
    }
    if !up.same_phase(down) {
        return Err(Error::GridMismatch(format!(
            "segment {}: upstream grid ({} s from {}) does not line up with downstream ({} s from {})",
            seg.name(),
            up.step_s(),
            up.start(),
            down.step_s(),
            down.start()
        )));
    }
    let start = up.start().max(down.start());
    let end = up.end().min(down.end());
    let step = up.step_us();
    let n = ((end.micros() - start.micros()) / step).max(0) as usize;
    let i0 = ((start.micros() - up.start().micros()) / step) as usize;
    let j0 = ((start.micros() - down.start().micros()) / step) as usize;
    let values = (0..n)
        .map(|k| match (up.get(i0 + k), down.get(j0 + k)) {
            (Some(a), Some(b)) => Some((a - b) / seg.length_km),
            _ => None,
        })
        .collect();
    Ok(UniformSeries::from_step_us(start, step, values))
}

/// Trailing mean over the last `window_s` seconds of present bins.
///
/// The output at bin `k` averages bins `k-n+1..=k` (`n = window_s / step`),
/// i.e. the window that ends where bin `k` ends. It is missing when fewer than
/// 10% of those `n` bins are present.
pub fn moving_average(u: &UniformSeries, window_s: f64) -> Result<UniformSeries> {
    let window_us = step_to_micros(window_s)?;
    if window_us < u.step_us() {
        return Err(Error::invalid(format!(
            "window {window_s} s is shorter than the {} s grid step",
            u.step_s()
        )));
    }
    let n = (window_us / u.step_us()) as usize;
    let min_count = ((MIN_AVERAGE_COVERAGE * n as f64).ceil() as usize).max(1);
    let vals = u.values();
    let mut out = Vec::with_capacity(vals.len());
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..vals.len() {
        if let Some(v) = vals[k] {
            sum += v;
            count += 1;
        }
        if k >= n {
            if let Some(v) = vals[k - n] {
                sum -= v;
                count -= 1;
            }
        }
        if count == 0 {
            // resync so rounding residue never leaks across a gap
            sum = 0.0;
        }
        out.push((count >= min_count).then(|| sum / count as f64));
    }
    Ok(u.with_values(out))
}

/// Worst-case error in bar on `dP` when the true density differs from the assumed one.
pub fn density_error_bound(assumed: &FluidProps, rho_true: f64, dz_m: f64) -> f64 {
    (rho_true - assumed.density_kg_m3).abs() * assumed.gravity_m_s2 * dz_m.abs() / PA_PER_BAR
}

/// Short- and long-term head loss of one segment on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLossSeries {
    pub segment: SegmentMeta,
    pub short_term: UniformSeries,
    pub long_term: UniformSeries,
}

impl HeadLossSeries {
    /// Head loss from two compensated station series, smoothed over `window_s`.
    pub fn compute(
        up: &UniformSeries,
        down: &UniformSeries,
        segment: &SegmentMeta,
        window_s: f64,
    ) -> Result<Self> {
        let short_term = head_loss(up, down, segment)?;
        let long_term = moving_average(&short_term, window_s)?;
        Ok(HeadLossSeries {
            segment: segment.clone(),
            short_term,
            long_term,
        })
    }

    /// `bin_start_us,short_term_bar_per_km,long_term_bar_per_km`, empty when missing.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_start_us,short_term_bar_per_km,long_term_bar_per_km")?;
        for k in 0..self.short_term.len() {
            write!(w, "{},", self.short_term.time_at(k).micros())?;
            if let Some(v) = self.short_term.get(k) {
                write!(w, "{v}")?;
            }
            w.write_all(b",")?;
            if let Some(v) = self.long_term.get(k) {
                write!(w, "{v}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Reads a head-loss CSV back into short- and long-term series.
pub fn load_head_loss_csv(path: impl AsRef<std::path::Path>, segment: SegmentMeta) -> Result<HeadLossSeries> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim_end())
        != Some("bin_start_us,short_term_bar_per_km,long_term_bar_per_km")
    {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "unexpected head-loss header".into(),
        });
    }
    let mut times = Vec::new();
    let mut short = Vec::new();
    let mut long = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: message.to_string(),
        };
        let mut fields = line.split(',');
        let (Some(t), Some(s), Some(l), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
            return Err(err("expected three fields"));
        };
        let opt = |f: &str| -> Result<Option<f64>> {
            if f.is_empty() {
                Ok(None)
            } else {
                f.parse().map(Some).map_err(|_| err("bad number"))
            }
        };
        times.push(t.parse::<i64>().map_err(|_| err("bad timestamp"))?);
        short.push(opt(s)?);
        long.push(opt(l)?);
    }
    let step = match times.as_slice() {
        [a, b, ..] if b > a => b - a,
        [_] | [] => crate::series::MICROS_PER_SECOND * 60,
        _ => {
            return Err(Error::NonMonotonic {
                path: path.to_path_buf(),
                row: 2,
            })
        }
    };
    let start = crate::series::Timestamp::from_micros(times.first().copied().unwrap_or(0));
    if times.iter().enumerate().any(|(k, t)| *t != start.micros() + k as i64 * step) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "rows are not on a uniform grid".into(),
        });
    }
    Ok(HeadLossSeries {
        segment,
        short_term: UniformSeries::from_step_us(start, step, short),
        long_term: UniformSeries::from_step_us(start, step, long),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Timestamp;
    use proptest::prelude::*;

    fn u(values: Vec<Option<f64>>) -> UniformSeries {
        UniformSeries::new(Timestamp::from_micros(0), 60.0, values).unwrap()
    }

    fn ac() -> SegmentMeta {
        SegmentMeta {
            upstream: "A".into(),
            downstream: "C".into(),
            length_km: 100.486,
        }
    }

    #[test]
    fn hydrostatic_reference_values() {
        let f = FluidProps::default();
        assert_eq!(hydrostatic_dp(&f, 180.0), -1_589_220.0);
        assert!((hydrostatic_dp(&f, 379.0) - -3_346_191.0).abs() < 1e-6);
        assert!((hydrostatic_dp(&f, 180.0) / PA_PER_BAR - -15.8922).abs() < 1e-4);
        assert!((hydrostatic_dp(&f, 379.0) / PA_PER_BAR - -33.4619).abs() < 1e-4);
        assert_eq!(hydrostatic_dp(&f, 0.0), 0.0);
    }

    #[test]
    fn compensation_table_matches_altitudes() {
        let stations = vec![
            StationMeta::new("A", 0.0, 179.0),
            StationMeta::new("B", 59.307, 359.0),
            StationMeta::new("C", 100.486, 558.0),
        ];
        let t = compensation_table(&stations, &FluidProps::default()).unwrap();
        assert_eq!(t[0].dz_m, 0.0);
        assert_eq!(t[1].dz_m, 180.0);
        assert_eq!(t[2].dz_m, 379.0);
        assert!((t[2].dp_bar() - -33.4619).abs() < 1e-4);
    }

    #[test]
    fn compensate_station_b() {
        let s = u(vec![Some(30.0), None]);
        let c = compensate(&s, -1_589_220.0);
        assert!((c.get(0).unwrap() - 45.8922).abs() < 1e-12);
        assert_eq!(c.get(1), None);
        assert_eq!(compensate(&s, 0.0), s);
    }

    #[test]
    fn head_loss_reference_segment() {
        let h = head_loss(&u(vec![Some(50.0)]), &u(vec![Some(36.0)]), &ac()).unwrap();
        assert!((h.get(0).unwrap() - 14.0 / 100.486).abs() < 1e-15);
        assert!((h.get(0).unwrap() - 0.13932).abs() < 1e-5);
    }

    #[test]
    fn head_loss_missing_and_equal() {
        let up = u(vec![Some(40.0); 8]);
        let mut down = vec![Some(40.0); 8];
        down[5] = None;
        let h = head_loss(&up, &u(down), &ac()).unwrap();
        assert_eq!(h.get(5), None);
        assert!(h.values().iter().enumerate().all(|(k, v)| k == 5 || *v == Some(0.0)));
    }

    #[test]
    fn head_loss_grid_mismatch() {
        let a = u(vec![Some(1.0); 4]);
        let b = UniformSeries::new(Timestamp::from_micros(30_000_000), 60.0, vec![Some(1.0); 4]).unwrap();
        assert!(matches!(head_loss(&a, &b, &ac()), Err(Error::GridMismatch(_))));
        let c = UniformSeries::new(Timestamp::from_micros(0), 30.0, vec![Some(1.0); 4]).unwrap();
        assert!(head_loss(&a, &c, &ac()).is_err());
    }

    #[test]
    fn head_loss_uses_overlap() {
        let a = u(vec![Some(2.0); 10]);
        let b = UniformSeries::new(Timestamp::from_micros(120_000_000), 60.0, vec![Some(1.0); 20]).unwrap();
        let h = head_loss(&a, &b, &ac()).unwrap();
        assert_eq!(h.start(), b.start());
        assert_eq!(h.len(), 8);
    }

    #[test]
    fn moving_average_constant() {
        let s = u(vec![Some(0.2); 300]);
        let m = moving_average(&s, 6000.0).unwrap();
        // 100-bin window, 10 bins needed
        assert_eq!(m.values()[..9].iter().filter(|v| v.is_some()).count(), 0);
        for v in m.values()[9..].iter() {
            assert!((v.unwrap() - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn moving_average_step_response() {
        // 10-bin window; unit step at bin 20
        let s = u((0..60).map(|k| Some(if k >= 20 { 1.0 } else { 0.0 })).collect());
        let m = moving_average(&s, 600.0).unwrap();
        assert_eq!(m.get(19), Some(0.0));
        assert_eq!(m.get(20), Some(0.1));
        assert!(m.get(28).unwrap() < 1.0);
        // window ending exactly 600 s after the step
        assert_eq!(m.get(29), Some(1.0));
        for k in 20..29 {
            assert!(m.get(k).unwrap() < m.get(k + 1).unwrap());
        }
    }

    #[test]
    fn moving_average_sparse_is_missing() {
        let mut v = vec![None; 200];
        v[50] = Some(1.0);
        v[120] = Some(1.0);
        let m = moving_average(&u(v), 6000.0).unwrap();
        assert_eq!(m.present_count(), 0);
    }

    #[test]
    fn density_bounds() {
        let f = FluidProps::default();
        assert!((density_error_bound(&f, 830.0, 379.0) - 2.603).abs() < 1e-3);
        assert!((density_error_bound(&f, 1000.0, 180.0) - 1.766).abs() < 1e-3);
        assert_eq!(density_error_bound(&f, 900.0, 379.0), 0.0);
        // the heavy-crude case at the far station exceeds 3 bar
        assert!((density_error_bound(&f, 1000.0, 379.0) - 3.71799).abs() < 1e-5);
    }

    #[test]
    fn head_loss_csv_roundtrip() {
        let hl = HeadLossSeries::compute(
            &u(vec![Some(50.0), None, Some(49.0)]),
            &u(vec![Some(36.0), Some(36.0), Some(36.0)]),
            &ac(),
            60.0,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let mut buf = Vec::new();
        hl.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(2).unwrap().ends_with(",,"));
        std::fs::write(&p, buf).unwrap();
        assert_eq!(load_head_loss_csv(&p, ac()).unwrap(), hl);
    }

    proptest! {
        #[test]
        fn dp_linear_and_opposite(rho in 700.0f64..1100.0, dz in -500.0f64..500.0, a in 0.1f64..3.0) {
            let f = FluidProps::with_density(rho);
            let g = FluidProps::with_density(rho * a);
            prop_assert!((hydrostatic_dp(&g, dz) - a * hydrostatic_dp(&f, dz)).abs() <= 1e-9 * hydrostatic_dp(&g, dz).abs().max(1.0));
            prop_assert!((hydrostatic_dp(&f, a * dz) - a * hydrostatic_dp(&f, dz)).abs() <= 1e-9 * hydrostatic_dp(&f, a * dz).abs().max(1.0));
            if dz != 0.0 {
                prop_assert!(hydrostatic_dp(&f, dz).signum() == -dz.signum());
            }
        }

        #[test]
        fn compensate_roundtrip(vals in prop::collection::vec(prop::option::of(0.0f64..80.0), 0..50), dp in -4e6f64..4e6) {
            let s = u(vals);
            let back = compensate(&compensate(&s, dp), -dp);
            for (a, b) in s.values().iter().zip(back.values()) {
                match (a, b) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 2.0 * f64::EPSILON * (a.abs() + dp.abs() / 1e5)),
                    (None, None) => {}
                    _ => prop_assert!(false, "mask changed"),
                }
            }
        }

        #[test]
        fn head_loss_antisymmetric(a in prop::collection::vec(prop::option::of(0.0f64..80.0), 1..40),
                                   shift in -10.0f64..10.0) {
            let b: Vec<_> = a.iter().map(|v| v.map(|v| v + shift)).collect();
            let (ua, ub) = (u(a), u(b));
            let fwd = head_loss(&ua, &ub, &ac()).unwrap();
            let rev = head_loss(&ub, &ua, &ac()).unwrap();
            for (x, y) in fwd.values().iter().zip(rev.values()) {
                prop_assert_eq!(x.map(|v| -v), *y);
            }
        }

        #[test]
        fn moving_average_within_window_range(vals in prop::collection::vec(prop::option::of(-1.0f64..1.0), 1..200), n in 1usize..30) {
            let s = u(vals);
            let m = moving_average(&s, 60.0 * n as f64).unwrap();
            for k in 0..s.len() {
                if let Some(v) = m.get(k) {
                    let lo = k.saturating_sub(n - 1);
                    let window: Vec<f64> = s.values()[lo..=k].iter().flatten().copied().collect();
                    let min = window.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(v >= min - 1e-12 && v <= max + 1e-12);
                }
            }
        }

        #[test]
        fn moving_average_of_constant(c in -5.0f64..5.0, n in 1usize..50, len in 1usize..300) {
            let m = moving_average(&u(vec![Some(c); len]), 60.0 * n as f64).unwrap();
            for v in m.values().iter().flatten() {
                prop_assert!((v - c).abs() <= 1e-12 * c.abs().max(1.0));
            }
        }
    }
}
