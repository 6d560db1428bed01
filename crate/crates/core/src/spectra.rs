//! Energy grids, normalized emission spectra and basis attenuation functions.
//!
//! Spectra are stored as dimensionless bin weights `w_j = S_j * dE` summing to
//! one. Basis functions `psi_i(E)` are sampled on the same uniform grid; the
//! underlying tables are kept so composites can be synthesized at energies off
//! the grid.

use std::path::Path;

use crate::error::{Error, Result};

/// Relative tolerance on bin spacing uniformity.
const SPACING_RTOL: f64 = 1e-6;

/// Bin width assumed for a single-bin spectrum file, which carries no spacing.
pub const SINGLE_BIN_WIDTH_KEV: f64 = 1.0;

/// Uniform energy binning.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrid {
    centers_kev: Vec<f64>,
    width_kev: f64,
}

impl EnergyGrid {
    pub fn new(centers_kev: Vec<f64>, width_kev: f64) -> Result<Self> {
        if centers_kev.is_empty() {
            return Err(Error::Parameter("energy grid has no bins".into()));
        }
        if !(width_kev > 0.0 && width_kev.is_finite()) {
            return Err(Error::Parameter(format!(
                "bin width must be positive, got {width_kev}"
            )));
        }
        if centers_kev.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::Parameter("bin energies must be positive".into()));
        }
        for pair in centers_kev.windows(2) {
            let step = pair[1] - pair[0];
            if !(step > 0.0) {
                return Err(Error::Parameter("bin energies must be strictly ascending".into()));
            }
            if (step - width_kev).abs() > SPACING_RTOL * width_kev {
                return Err(Error::Parameter(format!(
                    "bin spacing {step} keV differs from width {width_kev} keV"
                )));
            }
        }
        Ok(Self {
            centers_kev,
            width_kev,
        })
    }

    pub fn uniform(first_kev: f64, width_kev: f64, n_bins: usize) -> Result<Self> {
        let centers = (0..n_bins)
            .map(|j| first_kev + j as f64 * width_kev)
            .collect();
        Self::new(centers, width_kev)
    }

    pub fn centers_kev(&self) -> &[f64] {
        &self.centers_kev
    }

    pub fn width_kev(&self) -> f64 {
        self.width_kev
    }

    pub fn len(&self) -> usize {
        self.centers_kev.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers_kev.is_empty()
    }

    fn matches(&self, other: &EnergyGrid) -> bool {
        self.len() == other.len()
            && (self.width_kev - other.width_kev).abs() <= SPACING_RTOL * self.width_kev
            && self
                .centers_kev
                .iter()
                .zip(&other.centers_kev)
                .all(|(a, b)| (a - b).abs() <= SPACING_RTOL * self.width_kev)
    }

    /// Index of the bin centered at `energy_kev`, if any.
    fn index_of(&self, energy_kev: f64) -> Option<usize> {
        let pos = (energy_kev - self.centers_kev[0]) / self.width_kev;
        let j = pos.round();
        if j < 0.0 || (pos - j).abs() > SPACING_RTOL * 10.0 {
            return None;
        }
        let j = j as usize;
        (j < self.len()).then_some(j)
    }

    /// Smallest grid that contains both grids' bins. Both must share the bin
    /// width and be aligned to the same lattice.
    pub fn union(&self, other: &EnergyGrid) -> Result<EnergyGrid> {
        if (self.width_kev - other.width_kev).abs() > SPACING_RTOL * self.width_kev {
            return Err(Error::Parameter(format!(
                "spectra use different bin widths ({} vs {} keV)",
                self.width_kev, other.width_kev
            )));
        }
        let offset = (other.centers_kev[0] - self.centers_kev[0]) / self.width_kev;
        if (offset - offset.round()).abs() > SPACING_RTOL * 10.0 {
            return Err(Error::Parameter(
                "spectra bins are not aligned to a common lattice".into(),
            ));
        }
        let lo = self.centers_kev[0].min(other.centers_kev[0]);
        let hi = self.centers_kev[self.len() - 1].max(other.centers_kev[other.len() - 1]);
        let n = ((hi - lo) / self.width_kev).round() as usize + 1;
        EnergyGrid::uniform(lo, self.width_kev, n)
    }
}

/// Normalized emission spectrum on an energy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: EnergyGrid,
    weights: Vec<f64>,
    original_sum: f64,
}

impl Spectrum {
    /// Builds a spectrum from non-negative weights, renormalizing to unit sum.
    pub fn new(grid: EnergyGrid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} spectrum weights", grid.len()),
                found: format!("{}", weights.len()),
            });
        }
        if let Some(j) = weights.iter().position(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Parameter(format!(
                "spectrum weight {} at bin {j} is not a finite non-negative number",
                weights[j]
            )));
        }
        let original_sum: f64 = weights.iter().sum();
        if !(original_sum > 0.0) {
            return Err(Error::Parameter("spectrum has zero total weight".into()));
        }
        let weights = weights.iter().map(|w| w / original_sum).collect();
        Ok(Self {
            grid,
            weights,
            original_sum,
        })
    }

    /// Single-bin spectrum at bin `index` of `grid`.
    pub fn monochromatic(grid: EnergyGrid, index: usize) -> Result<Self> {
        let mut weights = vec![0.0; grid.len()];
        *weights.get_mut(index).ok_or_else(|| {
            Error::Parameter(format!("bin {index} outside {}-bin grid", grid.len()))
        })? = 1.0;
        Self::new(grid, weights)
    }

    pub fn grid(&self) -> &EnergyGrid {
        &self.grid
    }

    /// Normalized weights `w_j = S_j * dE`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight total before normalization, as read from the source.
    pub fn original_sum(&self) -> f64 {
        self.original_sum
    }

    pub fn mean_energy_kev(&self) -> f64 {
        self.grid
            .centers_kev
            .iter()
            .zip(&self.weights)
            .map(|(e, w)| e * w)
            .sum()
    }

    /// Re-expresses the spectrum on a larger aligned grid; new bins get zero
    /// weight.
    pub fn on_grid(&self, grid: &EnergyGrid) -> Result<Spectrum> {
        if self.grid.matches(grid) {
            return Ok(self.clone());
        }
        let mut weights = vec![0.0; grid.len()];
        for (e, w) in self.grid.centers_kev.iter().zip(&self.weights) {
            let j = grid.index_of(*e).ok_or_else(|| {
                Error::Parameter(format!("spectrum bin at {e} keV does not lie on the target grid"))
            })?;
            weights[j] = *w;
        }
        Ok(Spectrum {
            grid: grid.clone(),
            weights,
            original_sum: self.original_sum,
        })
    }
}

/// Parses non-empty, non-comment lines of `energy value` pairs.
fn parse_pairs(text: &str, path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected two columns, found {}", fields.len()),
            ));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, line_no, format!("not a finite number: {s:?}")))
        };
        rows.push((line_no, parse(fields[0])?, parse(fields[1])?));
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 0, "no data lines"));
    }
    for pair in rows.windows(2) {
        if pair[1].1 <= pair[0].1 {
            return Err(Error::parse(path, pair[1].0, "energies must be strictly ascending"));
        }
    }
    Ok(rows)
}

pub fn parse_spectrum(text: &str, path: &Path) -> Result<Spectrum> {
    let rows = parse_pairs(text, path)?;
    for &(line, energy, weight) in &rows {
        if energy <= 0.0 {
            return Err(Error::parse(path, line, "energy must be positive"));
        }
        if weight < 0.0 {
            return Err(Error::parse(path, line, format!("negative weight {weight}")));
        }
    }
    let width = if rows.len() > 1 {
        rows[1].1 - rows[0].1
    } else {
        SINGLE_BIN_WIDTH_KEV
    };
    for pair in rows.windows(2) {
        let step = pair[1].1 - pair[0].1;
        if (step - width).abs() > SPACING_RTOL * width {
            return Err(Error::parse(
                path,
                pair[1].0,
                format!("non-uniform bin spacing: {step} keV vs {width} keV"),
            ));
        }
    }
    let grid = EnergyGrid::new(rows.iter().map(|r| r.1).collect(), width)
        .map_err(|e| Error::parse(path, rows[0].0, e.to_string()))?;
    Spectrum::new(grid, rows.iter().map(|r| r.2).collect())
        .map_err(|e| Error::parse(path, rows[0].0, e.to_string()))
}

pub fn load_spectrum(path: impl AsRef<Path>) -> Result<Spectrum> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spectrum(&text, path)
}

/// Tabulated energy function, interpolated linearly in log-log space.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationTable {
    energies_kev: Vec<f64>,
    values: Vec<f64>,
}

impl AttenuationTable {
    pub fn new(energies_kev: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if energies_kev.len() != values.len() || energies_kev.is_empty() {
            return Err(Error::Parameter(
                "attenuation table needs matching, non-empty columns".into(),
            ));
        }
        if energies_kev.iter().any(|&e| !(e > 0.0)) || values.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Parameter(
                "attenuation table entries must be positive".into(),
            ));
        }
        if energies_kev.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Parameter(
                "attenuation table energies must be strictly ascending".into(),
            ));
        }
        Ok(Self {
            energies_kev,
            values,
        })
    }

    pub fn energy_range(&self) -> (f64, f64) {
        (self.energies_kev[0], self.energies_kev[self.energies_kev.len() - 1])
    }

    pub fn interpolate(&self, energy_kev: f64) -> Result<f64> {
        let (lo, hi) = self.energy_range();
        // Grid centers built by repeated addition may land a hair outside.
        let slack = 1e-9 * hi;
        if !(energy_kev >= lo - slack && energy_kev <= hi + slack) {
            return Err(Error::EnergyOutOfRange {
                energy_kev,
                min_kev: lo,
                max_kev: hi,
            });
        }
        let e = energy_kev.clamp(lo, hi);
        let k = self.energies_kev.partition_point(|&x| x <= e);
        if k == 0 {
            return Ok(self.values[0]);
        }
        if k == self.energies_kev.len() {
            return Ok(self.values[k - 1]);
        }
        let (e0, e1) = (self.energies_kev[k - 1], self.energies_kev[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        if e == e0 {
            return Ok(v0);
        }
        let t = (e / e0).ln() / (e1 / e0).ln();
        Ok((v0.ln() + t * (v1 / v0).ln()).exp())
    }

    pub fn sample(&self, grid: &EnergyGrid) -> Result<Vec<f64>> {
        grid.centers_kev().iter().map(|&e| self.interpolate(e)).collect()
    }
}

pub fn parse_attenuation_table(text: &str, path: &Path) -> Result<AttenuationTable> {
    let rows = parse_pairs(text, path)?;
    for &(line, energy, value) in &rows {
        if energy <= 0.0 || value <= 0.0 {
            return Err(Error::parse(path, line, "energy and attenuation must be positive"));
        }
    }
    AttenuationTable::new(
        rows.iter().map(|r| r.1).collect(),
        rows.iter().map(|r| r.2).collect(),
    )
}

pub fn load_attenuation_table(path: impl AsRef<Path>) -> Result<AttenuationTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_attenuation_table(&text, path)
}

/// Loads an attenuation table and samples it at the bin centers of `grid`.
pub fn load_basis(path: impl AsRef<Path>, grid: &EnergyGrid) -> Result<Vec<f64>> {
    load_attenuation_table(path)?.sample(grid)
}

/// Two basis energy functions `psi_1`, `psi_2` on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    grid: EnergyGrid,
    psi: [Vec<f64>; 2],
    names: [String; 2],
    tables: [AttenuationTable; 2],
}

impl BasisSet {
    pub fn from_tables(
        grid: EnergyGrid,
        tables: [AttenuationTable; 2],
        names: [String; 2],
    ) -> Result<Self> {
        let psi = [tables[0].sample(&grid)?, tables[1].sample(&grid)?];
        Ok(Self {
            grid,
            psi,
            names,
            tables,
        })
    }

    /// Basis defined only by its grid samples; off-grid energies are
    /// log-log interpolated between them.
    pub fn from_samples(grid: EnergyGrid, psi: [Vec<f64>; 2], names: [String; 2]) -> Result<Self> {
        for (i, p) in psi.iter().enumerate() {
            if p.len() != grid.len() {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} samples for basis {}", grid.len(), i + 1),
                    found: format!("{}", p.len()),
                });
            }
            if p.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Parameter(format!(
                    "basis {} must be positive in every bin",
                    i + 1
                )));
            }
        }
        let tables = [
            AttenuationTable::new(grid.centers_kev.clone(), psi[0].clone())?,
            AttenuationTable::new(grid.centers_kev.clone(), psi[1].clone())?,
        ];
        Ok(Self {
            grid,
            psi,
            names,
            tables,
        })
    }

    pub fn grid(&self) -> &EnergyGrid {
        &self.grid
    }

    pub fn psi(&self, basis: usize) -> &[f64] {
        &self.psi[basis]
    }

    pub fn names(&self) -> &[String; 2] {
        &self.names
    }

    /// `(psi_1(E), psi_2(E))` at an arbitrary energy within the tables.
    pub fn psi_at_energy(&self, energy_kev: f64) -> Result<(f64, f64)> {
        Ok((
            self.tables[0].interpolate(energy_kev)?,
            self.tables[1].interpolate(energy_kev)?,
        ))
    }
}

/// Linear attenuation (1/cm) of densities `rho` in energy bin `j`.
#[inline]
pub fn mu_at(basis: &BasisSet, rho: (f64, f64), j: usize) -> f64 {
    basis.psi[0][j] * rho.0 + basis.psi[1][j] * rho.1
}

/// Low- and high-energy spectra together with the basis, all on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    low: Spectrum,
    high: Spectrum,
    basis: BasisSet,
}

impl SpectralModel {
    pub fn new(low: Spectrum, high: Spectrum, basis: BasisSet) -> Result<Self> {
        for (name, s) in [("low", &low), ("high", &high)] {
            if !s.grid().matches(basis.grid()) {
                return Err(Error::Parameter(format!(
                    "{name}-energy spectrum grid does not match the basis grid"
                )));
            }
        }
        Ok(Self { low, high, basis })
    }

    /// Puts both spectra on their union grid and samples the basis tables
    /// there.
    pub fn from_tables(
        low: &Spectrum,
        high: &Spectrum,
        tables: [AttenuationTable; 2],
        names: [String; 2],
    ) -> Result<Self> {
        let grid = low.grid().union(high.grid())?;
        let basis = BasisSet::from_tables(grid.clone(), tables, names)?;
        Self::new(low.on_grid(&grid)?, high.on_grid(&grid)?, basis)
    }

    pub fn low(&self) -> &Spectrum {
        &self.low
    }

    pub fn high(&self) -> &Spectrum {
        &self.high
    }

    /// Spectrum `k` (0 = low, 1 = high).
    pub fn spectrum(&self, k: usize) -> &Spectrum {
        match k {
            0 => &self.low,
            1 => &self.high,
            _ => panic!("spectrum index {k} out of range"),
        }
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.txt")
    }

    #[test]
    fn symmetric_spectrum_renormalizes() {
        let s = parse_spectrum("30 1.0\n70 1.0\n", p()).unwrap();
        assert_eq!(s.weights(), &[0.5, 0.5]);
        assert_eq!(s.grid().width_kev(), 40.0);
        assert_eq!(s.original_sum(), 2.0);
    }

    #[test]
    fn single_line_is_monochromatic() {
        let s = parse_spectrum("# mono\n70 5.0\n", p()).unwrap();
        assert_eq!(s.weights(), &[1.0]);
        assert_eq!(s.grid().centers_kev(), &[70.0]);
    }

    #[test]
    fn negative_weight_names_line() {
        match parse_spectrum("70 -1\n", p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_spectrum("# header\n30 1\n50 2\n70 -1\n", p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_unordered_lines_are_rejected() {
        assert!(matches!(parse_spectrum("30 1 2\n", p()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_spectrum("30 x\n", p()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_spectrum("30 1\n20 1\n", p()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_spectrum("30 1\n40 1\n55 1\n", p()),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(parse_spectrum("# nothing\n", p()).is_err());
    }

    #[test]
    fn log_log_interpolation() {
        let t = parse_attenuation_table("10 100\n100 1\n", p()).unwrap();
        assert_eq!(t.interpolate(10.0).unwrap(), 100.0);
        assert_eq!(t.interpolate(100.0).unwrap(), 1.0);
        let mid = (10.0f64 * 100.0).sqrt();
        assert!((t.interpolate(mid).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(
            t.interpolate(5.0),
            Err(Error::EnergyOutOfRange { .. })
        ));
        assert!(t.interpolate(150.0).is_err());
    }

    #[test]
    fn decreasing_table_samples_decrease() {
        let t = parse_attenuation_table("10 5.3\n20 0.81\n40 0.27\n100 0.17\n", p()).unwrap();
        let grid = EnergyGrid::uniform(10.0, 3.0, 31).unwrap();
        let s = t.sample(&grid).unwrap();
        assert!(s.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn mu_at_evaluates_basis_combination() {
        let grid = EnergyGrid::uniform(50.0, 10.0, 1).unwrap();
        let basis = BasisSet::from_samples(
            grid,
            [vec![0.2], vec![0.5]],
            ["a".into(), "b".into()],
        )
        .unwrap();
        assert_eq!(mu_at(&basis, (0.0, 0.0), 0), 0.0);
        assert!((mu_at(&basis, (1.0, 2.0), 0) - 1.2).abs() < 1e-15);
        let (a, b) = ((0.3, 1.1), (2.0, -0.4));
        let combo = mu_at(&basis, (2.0 * a.0 + 3.0 * b.0, 2.0 * a.1 + 3.0 * b.1), 0);
        let split = 2.0 * mu_at(&basis, a, 0) + 3.0 * mu_at(&basis, b, 0);
        assert!((combo - split).abs() < 1e-14);
    }

    #[test]
    fn spectra_merge_onto_union_grid() {
        let low = parse_spectrum("20 1\n22 1\n24 2\n", p()).unwrap();
        let high = parse_spectrum("22 1\n24 1\n26 1\n28 1\n", p()).unwrap();
        let grid = low.grid().union(high.grid()).unwrap();
        assert_eq!(grid.centers_kev(), &[20.0, 22.0, 24.0, 26.0, 28.0]);
        let l = low.on_grid(&grid).unwrap();
        assert_eq!(l.weights(), &[0.25, 0.25, 0.5, 0.0, 0.0]);
        let misaligned = parse_spectrum("21 1\n23 1\n", p()).unwrap();
        assert!(low.grid().union(misaligned.grid()).is_err());
    }

    #[test]
    fn spectral_model_requires_shared_grid() {
        let grid = EnergyGrid::uniform(50.0, 50.0, 2).unwrap();
        let other = EnergyGrid::uniform(40.0, 50.0, 2).unwrap();
        let basis = BasisSet::from_samples(
            grid.clone(),
            [vec![0.3, 0.2], vec![0.6, 0.2]],
            ["w".into(), "b".into()],
        )
        .unwrap();
        let low = Spectrum::monochromatic(grid.clone(), 0).unwrap();
        let bad = Spectrum::monochromatic(other, 1).unwrap();
        assert!(SpectralModel::new(low.clone(), bad, basis.clone()).is_err());
        let high = Spectrum::monochromatic(grid, 1).unwrap();
        assert!(SpectralModel::new(low, high, basis).is_ok());
    }
}
