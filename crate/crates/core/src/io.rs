//! Cochain files: a CSV table `cell_index,axis_subset,value` plus a JSON
//! sidecar with the grid description. Values are written with 17 significant
//! digits, which round-trips every f64 bit-exactly.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exterior::{mask_label, parse_mask_label};
use crate::grid::{Cochain, GridSpec, MetricSpec, TorusGrid};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CochainMeta {
    pub schema_version: u32,
    pub dim: usize,
    pub resolution: Vec<usize>,
    pub periods: Vec<f64>,
    pub metric_id: String,
    pub metric: MetricSpec,
    pub degree: usize,
    pub cells: usize,
}

impl CochainMeta {
    pub fn of(c: &Cochain<f64>) -> Self {
        let s = c.grid().spec();
        Self {
            schema_version: SCHEMA_VERSION,
            dim: s.dim,
            resolution: s.resolution.clone(),
            periods: s.periods.clone(),
            metric_id: s.metric.id(),
            metric: s.metric.clone(),
            degree: c.degree(),
            cells: c.len(),
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            dim: self.dim,
            resolution: self.resolution.clone(),
            periods: self.periods.clone(),
            metric: self.metric.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    cell_index: usize,
    axis_subset: String,
    value: String,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Format a value so that parsing it back gives the identical f64.
pub fn format_exact(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_cochain(path: &Path, c: &Cochain<f64>) -> Result<()> {
    let grid = c.grid();
    let mut w = csv::Writer::from_path(path)?;
    for (i, &v) in c.values().iter().enumerate() {
        let (_, mask) = grid.cell_of(c.degree(), i);
        w.serialize(Row { cell_index: i, axis_subset: mask_label(mask), value: format_exact(v) })?;
    }
    w.flush()?;
    let meta = serde_json::to_string_pretty(&CochainMeta::of(c))?;
    std::fs::write(sidecar_path(path), meta + "\n")?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<CochainMeta> {
    let text = std::fs::read_to_string(sidecar_path(path))?;
    let meta: CochainMeta = serde_json::from_str(&text)?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::Parse(format!("unsupported schema version {}", meta.schema_version)));
    }
    Ok(meta)
}

/// Read a cochain, building its grid from the sidecar.
pub fn read_cochain(path: &Path) -> Result<Cochain<f64>> {
    let meta = read_meta(path)?;
    let grid = TorusGrid::new(meta.grid_spec())?;
    read_values(path, &grid, meta.degree)
}

/// Read a cochain that must live on `grid`.
pub fn read_cochain_on(path: &Path, grid: &Arc<TorusGrid>) -> Result<Cochain<f64>> {
    let meta = read_meta(path)?;
    if meta.grid_spec() != *grid.spec() {
        return Err(Error::GridMismatch(format!("file grid {:?} does not match {:?}", meta.grid_spec(), grid.spec())));
    }
    read_values(path, grid, meta.degree)
}

fn read_values(path: &Path, grid: &Arc<TorusGrid>, degree: usize) -> Result<Cochain<f64>> {
    let n = grid.num_cells(degree);
    let mut values = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    let mut r = csv::Reader::from_path(path)?;
    for row in r.deserialize() {
        let row: Row = row?;
        if row.cell_index >= n || seen[row.cell_index] {
            return Err(Error::Parse(format!("bad or repeated cell index {}", row.cell_index)));
        }
        let (_, mask) = grid.cell_of(degree, row.cell_index);
        if parse_mask_label(&row.axis_subset)? != mask {
            return Err(Error::Parse(format!(
                "cell {} has axis subset {}, expected {}",
                row.cell_index,
                row.axis_subset,
                mask_label(mask)
            )));
        }
        values[row.cell_index] = row.value.trim().parse().map_err(|_| Error::Parse(format!("bad value '{}'", row.value)))?;
        seen[row.cell_index] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parse(format!("cell {missing} missing")));
    }
    Cochain::from_values(grid, degree, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = GridSpec::unit(3, 4).with_metric(MetricSpec::conformal(3, 0.1, 2));
        let g = TorusGrid::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut vals: Vec<f64> =
            (0..g.num_cells(2)).map(|_| rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-300..300))).collect();
        vals[0] = f64::MIN_POSITIVE;
        vals[1] = -0.0;
        vals[2] = 1.0 / 3.0;
        let c = Cochain::from_values(&g, 2, vals).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.csv");
        write_cochain(&p, &c).unwrap();
        let back = read_cochain(&p).unwrap();
        assert_eq!(back.degree(), 2);
        for (a, b) in c.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(read_cochain_on(&p, &g).is_ok());
        let other = TorusGrid::new(GridSpec::unit(3, 4)).unwrap();
        assert!(matches!(read_cochain_on(&p, &other), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn header_and_labels() {
        let g = TorusGrid::new(GridSpec::unit(2, 3)).unwrap();
        let c = Cochain::from_values(&g, 1, (0..18).map(|i| i as f64).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_cochain(&p, &c).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("cell_index,axis_subset,value"));
        assert_eq!(lines.next(), Some("0,1,0.0000000000000000e0"));
        assert!(text.contains("\n9,2,9.0000000000000000e0\n"));
    }

    #[test]
    fn corrupted_file_is_rejected() {
        let g = TorusGrid::new(GridSpec::unit(2, 3)).unwrap();
        let c = Cochain::<f64>::zeros(&g, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_cochain(&p, &c).unwrap();
        let text = std::fs::read_to_string(&p).unwrap().replace("\n4,1,", "\n4,2,");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(read_cochain(&p), Err(Error::Parse(_))));
    }
}
