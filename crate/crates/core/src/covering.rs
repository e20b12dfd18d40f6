//! Section coverings: Vitali selection over dyadic height classes, finite
//! covers with shrunken disjointness, and one step of the growing ink-spots
//! estimate with lattice-sampled hypotheses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CoveringError;
use crate::geometry::{CellSet, Grid, Potential};
use crate::sections::{section, section_at_node, SectionSet};

/// A section of the collection together with its `K`-dilate.
#[derive(Clone, Debug)]
pub struct CollectionItem {
    pub center: Vec<f64>,
    pub height: f64,
    pub section: SectionSet,
    pub dilate: SectionSet,
}

#[derive(Clone, Debug)]
pub struct SectionCollection {
    pub items: Vec<CollectionItem>,
    pub k: f64,
    pub theta0: f64,
}

impl SectionCollection {
    /// Builds the sections and checks that every `4θ₀`-dilate is compactly
    /// contained in the grid.
    pub fn new(u: &Potential, items: &[(Vec<f64>, f64)], theta0: f64, k: f64) -> Result<Self, CoveringError> {
        if items.is_empty() {
            return Err(CoveringError::PreconditionViolation("empty collection".into()));
        }
        if !(k >= 1.0) || !(theta0 >= 1.0) {
            return Err(CoveringError::PreconditionViolation(format!("need K >= 1 and theta0 >= 1, got {k}, {theta0}")));
        }
        let built = items
            .iter()
            .map(|(x, h)| {
                let wide = section(u, x, 4.0 * theta0 * h)?;
                if !wide.compactly_contained {
                    return Err(CoveringError::PreconditionViolation(format!(
                        "S({x:?}, 4θ₀·{h}) is not compactly contained"
                    )));
                }
                Ok(CollectionItem {
                    center: x.clone(),
                    height: *h,
                    section: section(u, x, *h)?,
                    dilate: section(u, x, k * h)?,
                })
            })
            .collect::<Result<Vec<_>, CoveringError>>()?;
        Ok(SectionCollection { items: built, k, theta0 })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    /// Dyadic class `i` with `H/2^i < h ≤ H/2^{i-1}`.
    pub class: usize,
    pub index: usize,
    pub center: Vec<f64>,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverCertificate {
    /// Selected sections share no cell.
    pub disjoint: bool,
    /// Every input section lies in the union of selected `K`-dilates.
    pub covered: bool,
    /// Inputs contained in a single selected dilate that meets them.
    pub single_dilate: usize,
    pub checked_cells: usize,
    /// `(item, cell)` of the first uncovered cell.
    pub uncovered: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct VitaliSelection {
    pub selected: Vec<usize>,
    pub trace: Vec<SelectionRow>,
    pub certificate: CoverCertificate,
}

impl VitaliSelection {
    pub fn require(&self, grid: &Grid) -> Result<(), CoveringError> {
        if let Some((_, cell)) = self.certificate.uncovered {
            return Err(CoveringError::CoverFailure { cell, point: grid.point(cell) });
        }
        if !self.certificate.disjoint {
            return Err(CoveringError::PreconditionViolation("selected sections overlap".into()));
        }
        Ok(())
    }
}

fn dyadic_class(h: f64, top: f64) -> usize {
    // Smallest i >= 1 with h > top / 2^i.
    let mut i = 1;
    while h <= top / 2f64.powi(i as i32) && i < 64 {
        i += 1;
    }
    i
}

/// Greedy maximal disjoint selection, one dyadic height class at a time
/// from the largest heights down; inside a class candidates go by
/// decreasing height, then by index.
pub fn vitali_select(c: &SectionCollection, grid: &Grid) -> VitaliSelection {
    let top = c.items.iter().map(|it| it.height).fold(0.0, f64::max);
    let mut order: Vec<(usize, usize)> = c.items.iter().enumerate().map(|(i, it)| (dyadic_class(it.height, top), i)).collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then(c.items[b.1].height.total_cmp(&c.items[a.1].height)).then(a.1.cmp(&b.1)));

    let mut taken = vec![false; grid.len()];
    let mut selected = Vec::new();
    let mut trace = Vec::new();
    for (class, i) in order {
        let it = &c.items[i];
        if it.section.cells.iter().any(|cell| taken[cell]) {
            continue;
        }
        for cell in it.section.cells.iter() {
            taken[cell] = true;
        }
        selected.push(i);
        trace.push(SelectionRow { class, index: i, center: it.center.clone(), height: it.height });
    }
    let certificate = certify(c, grid, &selected);
    VitaliSelection { selected, trace, certificate }
}

fn certify(c: &SectionCollection, grid: &Grid, selected: &[usize]) -> CoverCertificate {
    let disjoint = selected
        .par_iter()
        .enumerate()
        .all(|(a, &i)| selected[a + 1..].iter().all(|&j| !c.items[i].section.cells.intersects(&c.items[j].section.cells)));
    let mut union = vec![false; grid.len()];
    for &i in selected {
        for cell in c.items[i].dilate.cells.iter() {
            union[cell] = true;
        }
    }
    let mut uncovered = None;
    let mut checked = 0;
    let mut single = 0;
    for (k, it) in c.items.iter().enumerate() {
        checked += it.section.cells.len();
        if uncovered.is_none() {
            if let Some(cell) = it.section.cells.iter().find(|&cell| !union[cell]) {
                uncovered = Some((k, cell));
            }
        }
        let witnessed = selected.iter().any(|&j| {
            c.items[j].section.cells.intersects(&it.section.cells) && it.section.cells.is_subset(&c.items[j].dilate.cells)
        });
        if witnessed {
            single += 1;
        }
    }
    CoverCertificate { disjoint, covered: uncovered.is_none(), single_dilate: single, checked_cells: checked, uncovered }
}

#[derive(Clone, Debug)]
pub struct FiniteCover {
    /// Grid cells used as section centers.
    pub centers: Vec<usize>,
    pub heights: Vec<f64>,
    pub sections: Vec<SectionSet>,
    /// The `K⁻¹`-shrunken sections share no cell.
    pub shrunk_disjoint: bool,
}

impl FiniteCover {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Covers the cells of `d` by sections `S(x, h(x))` centered at cells of
/// `d`, selected through [`vitali_select`]-style greedy selection on the
/// shrunken sections `S(x, h(x)/K)`.
pub fn vitali_finite<H: Fn(usize) -> f64>(u: &Potential, d: &CellSet, h: H, k: f64) -> Result<FiniteCover, CoveringError> {
    if !(k >= 1.0) {
        return Err(CoveringError::PreconditionViolation(format!("need K >= 1, got {k}")));
    }
    let grid = u.grid();
    let mut cand = Vec::with_capacity(d.len());
    for x in d.iter() {
        let hx = h(x);
        let full = section_at_node(u, x, hx)?;
        if !full.compactly_contained {
            return Err(CoveringError::PreconditionViolation(format!(
                "S({:?}, {hx}) is not compactly contained",
                grid.point(x)
            )));
        }
        cand.push((x, hx, full));
    }
    let top = cand.iter().map(|c| c.1).fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..cand.len()).collect();
    order.sort_by(|&a, &b| {
        dyadic_class(cand[a].1, top).cmp(&dyadic_class(cand[b].1, top)).then(cand[b].1.total_cmp(&cand[a].1)).then(a.cmp(&b))
    });

    let mut taken = vec![false; grid.len()];
    let mut covered = vec![false; grid.len()];
    let mut chosen = Vec::new();
    let mut shrunk_sets: Vec<CellSet> = Vec::new();
    for i in order {
        let (x, hx, _) = &cand[i];
        let shrunk = section_at_node(u, *x, hx / k)?;
        if shrunk.cells.iter().any(|c| taken[c]) {
            continue;
        }
        for c in shrunk.cells.iter() {
            taken[c] = true;
        }
        for c in cand[i].2.cells.iter() {
            covered[c] = true;
        }
        shrunk_sets.push(shrunk.cells);
        chosen.push(i);
    }
    if let Some(cell) = d.iter().find(|&c| !covered[c]) {
        return Err(CoveringError::CoverFailure { cell, point: grid.point(cell) });
    }
    // Drop sections made redundant by the rest (finite subcover).
    let mut count = vec![0usize; grid.len()];
    for &i in &chosen {
        for c in cand[i].2.cells.iter() {
            count[c] += 1;
        }
    }
    let mut keep = Vec::new();
    let mut keep_shrunk = Vec::new();
    for (&i, s) in chosen.iter().zip(shrunk_sets) {
        let needed = cand[i].2.cells.iter().any(|c| d.contains(c) && count[c] == 1);
        if needed {
            keep.push(i);
            keep_shrunk.push(s);
        } else {
            for c in cand[i].2.cells.iter() {
                count[c] -= 1;
            }
        }
    }
    let shrunk_disjoint =
        (0..keep_shrunk.len()).all(|a| (a + 1..keep_shrunk.len()).all(|b| !keep_shrunk[a].intersects(&keep_shrunk[b])));
    Ok(FiniteCover {
        centers: keep.iter().map(|&i| cand[i].0).collect(),
        heights: keep.iter().map(|&i| cand[i].1).collect(),
        sections: keep.iter().map(|&i| cand[i].2.clone()).collect(),
        shrunk_disjoint,
    })
}

/// Lattice of sampled sections `S(x, t) ⊂ S(0, h)`: centers every `stride`
/// cells, heights `h 2^{-j}` for `j = 1..=levels`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionSampling {
    pub stride: usize,
    pub levels: usize,
    /// Smallest number of sampled sections containing a cell of `S(0, h)`.
    pub min_multiplicity: usize,
    pub sections: usize,
}

/// The sampled sections used to test hypothesis (i).
#[derive(Clone, Debug)]
pub struct SampledSections {
    pub sections: Vec<SectionSet>,
    pub sampling: SectionSampling,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InkSpotsReport {
    pub delta: f64,
    pub e_measure: f64,
    pub f_measure: f64,
    pub section_measure: f64,
    /// `|E| / |F|`, zero when `F` is empty.
    pub ratio: f64,
    pub sampling: SectionSampling,
    /// Sampled sections with `E`-density above `1 - δ`.
    pub dense_sections: usize,
    /// Hypothesis (i) quantifies over all sections; only the lattice is checked.
    pub sampled_hypothesis: bool,
}

impl InkSpotsReport {
    /// The decay factor `(1 - |E|/|F|)/δ` this instance certifies.
    pub fn certified_c2(&self) -> f64 {
        if self.f_measure == 0.0 {
            f64::INFINITY
        } else {
            (1.0 - self.ratio) / self.delta
        }
    }

    pub fn conclusion_holds(&self, c2: f64) -> bool {
        self.e_measure <= (1.0 - c2 * self.delta) * self.f_measure + 1e-12
    }
}

fn sample_sections(u: &Potential, outer: &SectionSet, stride: usize, levels: usize) -> Result<Vec<SectionSet>, CoveringError> {
    let grid = u.grid();
    let centers: Vec<usize> = outer
        .cells
        .iter()
        .filter(|&c| grid.multi_index(c).iter().all(|m| m % stride == 0))
        .collect();
    let mut out = Vec::new();
    for c in centers {
        for j in 1..=levels {
            let s = section_at_node(u, c, outer.height * 0.5f64.powi(j as i32))?;
            if !s.cells.is_empty() && s.cells.is_subset(&outer.cells) {
                out.push(s);
            }
        }
    }
    Ok(out)
}

/// Sections sampled densely enough that every cell of `outer` lies in at
/// least three of them (or the finest lattice when that is impossible).
pub fn dense_sampling(u: &Potential, outer: &SectionSet, levels: usize) -> Result<SampledSections, CoveringError> {
    let grid = u.grid();
    let mut stride = 8;
    loop {
        let sections = sample_sections(u, outer, stride, levels)?;
        let mut mult = vec![0usize; grid.len()];
        for s in &sections {
            for c in s.cells.iter() {
                mult[c] += 1;
            }
        }
        let min_multiplicity = outer.cells.iter().map(|c| mult[c]).min().unwrap_or(0);
        if min_multiplicity >= 3 || stride == 1 {
            let sampling = SectionSampling { stride, levels, min_multiplicity, sections: sections.len() };
            return Ok(SampledSections { sections, sampling });
        }
        stride /= 2;
    }
}

fn density(s: &SectionSet, e: &CellSet) -> f64 {
    s.cells.intersection(e).len() as f64 / s.cells.len() as f64
}

/// Smallest `F ⊇ E` meeting hypothesis (i) on the sampled sections: `E`
/// together with every sampled section whose `E`-density exceeds `1 - δ`.
pub fn grow_ink_spots(e: &CellSet, sections: &[SectionSet], delta: f64) -> CellSet {
    sections
        .iter()
        .filter(|s| density(s, e) > 1.0 - delta)
        .fold(e.clone(), |acc, s| acc.union(&s.cells))
}

/// Checks the hypotheses for `E ⊂ F ⊂ S(x0, h)` and reports `|E|/|F|`.
pub fn ink_spots_step(
    u: &Potential,
    e: &CellSet,
    f: &CellSet,
    outer: &SectionSet,
    k_hat: f64,
    delta: f64,
    sampled: &SampledSections,
) -> Result<InkSpotsReport, CoveringError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CoveringError::PreconditionViolation(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !e.is_subset(f) || !f.is_subset(&outer.cells) {
        return Err(CoveringError::PreconditionViolation("need E ⊂ F ⊂ S(0, h)".into()));
    }
    let wide = section(u, outer.center(), k_hat * outer.height)?;
    if !wide.compactly_contained {
        return Err(CoveringError::PreconditionViolation("S(0, K̂h) is not compactly contained".into()));
    }
    let grid = u.grid();
    let (e_measure, f_measure) = (e.measure(grid), f.measure(grid));
    if e_measure > (1.0 - delta) * outer.measure {
        return Err(CoveringError::HypothesisViolation {
            which: "ii".into(),
            detail: format!("|E| = {e_measure:.4e} > (1-δ)|S| = {:.4e}", (1.0 - delta) * outer.measure),
        });
    }
    let mut dense = 0;
    for s in &sampled.sections {
        if density(s, e) > 1.0 - delta {
            dense += 1;
            if !s.cells.is_subset(f) {
                return Err(CoveringError::HypothesisViolation {
                    which: "i".into(),
                    detail: format!("S({:?}, {:.4e}) is E-dense but leaves F", s.center(), s.height),
                });
            }
        }
    }
    let ratio = if f_measure > 0.0 { e_measure / f_measure } else { 0.0 };
    Ok(InkSpotsReport {
        delta,
        e_measure,
        f_measure,
        section_measure: outer.measure,
        ratio,
        sampling: sampled.sampling,
        dense_sections: dense,
        sampled_hypothesis: true,
    })
}

/// `c₂` as half the smallest certified factor over a calibration batch.
pub fn calibrate_c2(batch: &[InkSpotsReport]) -> Option<f64> {
    let m = batch.iter().map(|r| r.certified_c2()).filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
    m.is_finite().then_some(0.5 * m)
}
