//! Plot-ready aggregates: normalized error versus the sweep axis per method,
//! and the per-slot beampatterns of the first seed side by side.

use std::path::Path;

use crate::runner::{fmt_opt, write_file, Outcome, RunError};
use crate::spec::{ExperimentSpec, MethodKind};

/// Seed statistics of one (point, method) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub axis_value: Option<f64>,
    pub method: MethodKind,
    pub mean: Option<f64>,
    /// Sample standard deviation; 0 for a single seed.
    pub std: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub seeds_ok: usize,
    pub seeds_total: usize,
}

impl Aggregate {
    /// `ok`, `partial` or `all_failed`.
    pub fn flag(&self) -> &'static str {
        match self.seeds_ok {
            0 => "all_failed",
            k if k == self.seeds_total => "ok",
            _ => "partial",
        }
    }
}

/// Groups samples by (point, method), keeping first-appearance order of the
/// points and method order within a point. `None` errors count as failures.
pub fn aggregate<I>(samples: I) -> Vec<Aggregate>
where
    I: IntoIterator<Item = (usize, Option<f64>, MethodKind, Option<f64>)>,
{
    let mut cells: Vec<(usize, MethodKind, Option<f64>, Vec<f64>, usize)> = Vec::new();
    for (point, value, method, err) in samples {
        let cell = match cells.iter_mut().find(|c| c.0 == point && c.1 == method) {
            Some(c) => c,
            None => {
                cells.push((point, method, value, Vec::new(), 0));
                cells.last_mut().expect("just pushed")
            }
        };
        cell.4 += 1;
        if let Some(e) = err {
            cell.3.push(e);
        }
    }
    cells.sort_by_key(|c| (c.0, c.1));
    cells
        .into_iter()
        .map(|(_, method, axis_value, errs, total)| {
            let n = errs.len();
            let mean = (n > 0).then(|| errs.iter().sum::<f64>() / n as f64);
            let std = mean.map(|m| {
                if n < 2 {
                    0.0
                } else {
                    (errs.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                }
            });
            Aggregate {
                axis_value,
                method,
                mean,
                std,
                min: errs.iter().copied().reduce(f64::min),
                max: errs.iter().copied().reduce(f64::max),
                seeds_ok: n,
                seeds_total: total,
            }
        })
        .collect()
}

/// Writes `plot/error_vs_axis.csv` and `plot/beampattern_point{p}.csv`;
/// returns warnings for empty input.
pub fn emit_plot_data(spec: &ExperimentSpec, dir: &Path, outcomes: &[Outcome]) -> Result<Vec<String>, RunError> {
    let mut warnings = Vec::new();
    if outcomes.is_empty() {
        warnings.push("no results to aggregate; plot files are empty".to_owned());
    }
    let axis = spec.axis_name();
    let rows = aggregate(outcomes.iter().map(|o| {
        let err = if o.status.usable() { o.norm_error } else { None };
        (o.point, o.axis_value, o.method, err)
    }));
    write_file(&dir.join("plot").join("error_vs_axis.csv"), |w| {
        writeln!(w, "axis,axis_value,method,mean,std,min,max,seeds_ok,seeds_total,status")?;
        for r in &rows {
            writeln!(
                w,
                "{axis},{},{},{},{},{},{},{},{},{}",
                fmt_opt(r.axis_value),
                r.method,
                fmt_opt(r.mean),
                fmt_opt(r.std),
                fmt_opt(r.min),
                fmt_opt(r.max),
                r.seeds_ok,
                r.seeds_total,
                r.flag()
            )?;
        }
        Ok(())
    })?;

    let first_seed = spec.trial_seed(0);
    let mut points: Vec<(usize, Option<f64>)> = outcomes.iter().map(|o| (o.point, o.axis_value)).collect();
    points.dedup();
    for (p, value) in points {
        let cols: Vec<&Outcome> = outcomes
            .iter()
            .filter(|o| o.point == p && o.seed == first_seed)
            .collect();
        let Ok(scenario) = spec.scenario_at(value, first_seed) else { continue };
        write_file(&dir.join("plot").join(format!("beampattern_point{p}.csv")), |w| {
            write!(w, "slot,grid_angle_deg,desired")?;
            for o in &cols {
                write!(w, ",{}", o.method)?;
            }
            writeln!(w)?;
            for q in 0..scenario.schedule.n_slots() {
                for (m, angle) in scenario.grid.angles.iter().enumerate() {
                    write!(w, "{},{},{}", q + 1, angle.to_degrees(), scenario.desired.gains[q][m])?;
                    for o in &cols {
                        write!(w, ",{}", fmt_opt(o.slot_gains.as_ref().map(|g| g[q][m])))?;
                    }
                    writeln!(w)?;
                }
            }
            Ok(())
        })?;
    }
    Ok(warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_seeds_average_to_two() {
        let rows = aggregate([1.0, 2.0, 3.0].map(|e| (0, Some(5.0), MethodKind::Sca, Some(e))));
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.mean, Some(2.0));
        assert_eq!(r.std, Some(1.0));
        assert_eq!((r.min, r.max), (Some(1.0), Some(3.0)));
        assert_eq!((r.seeds_ok, r.seeds_total, r.flag()), (3, 3, "ok"));
    }

    #[test]
    fn single_point_single_method_gives_one_row() {
        let rows = aggregate([(0, None, MethodKind::Zf, Some(0.25))]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].std, Some(0.0));
    }

    #[test]
    fn all_failed_cells_have_no_mean() {
        let rows = aggregate([
            (0, Some(1.0), MethodKind::Fp, None),
            (0, Some(1.0), MethodKind::Fp, None),
            (1, Some(2.0), MethodKind::Fp, Some(0.1)),
            (1, Some(2.0), MethodKind::Fp, None),
        ]);
        assert_eq!(rows[0].mean, None);
        assert_eq!(rows[0].flag(), "all_failed");
        assert_eq!(rows[1].flag(), "partial");
        assert_eq!(rows[1].mean, Some(0.1));
    }

    #[test]
    fn cells_are_ordered_by_point_then_method() {
        let rows = aggregate([
            (1, Some(2.0), MethodKind::Sca, Some(1.0)),
            (0, Some(1.0), MethodKind::Zf, Some(1.0)),
            (0, Some(1.0), MethodKind::Sca, Some(1.0)),
        ]);
        let order: Vec<_> = rows.iter().map(|r| (r.axis_value, r.method)).collect();
        assert_eq!(
            order,
            vec![(Some(1.0), MethodKind::Sca), (Some(1.0), MethodKind::Zf), (Some(2.0), MethodKind::Sca)]
        );
    }
}
