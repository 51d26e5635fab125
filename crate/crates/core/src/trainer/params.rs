//! Parameter storage behind the SGD step.
//!
//! The step logic is written once against [`ParamStore`] and runs in two
//! modes: [`ExclusiveStore`] borrows the model directly and is bitwise
//! deterministic; [`AtomicTables`] mirrors the weights as atomic bits so
//! several workers can update without locks. Concurrent workers may overwrite
//! each other's writes; that loss is accepted, the arithmetic per update is
//! identical in both modes.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::model::{project_unit, EmbeddingModel};

/// Per-coordinate squared-gradient accumulators for the adaptive step size,
/// shaped like the model's two weight tables.
pub struct AdagradState {
    word_acc: Vec<f32>,
    sym_acc: Vec<f32>,
    epsilon: f32,
}

impl AdagradState {
    pub fn new(n_v: usize, n_e: usize, k: usize) -> Self {
        AdagradState {
            word_acc: vec![0.0; n_v * k],
            sym_acc: vec![0.0; n_e * k],
            epsilon: 1e-8,
        }
    }

    pub fn epsilon(&self) -> f32 {
        self.epsilon
    }

    pub fn word_accumulators(&self) -> &[f32] {
        &self.word_acc
    }

    pub fn symbol_accumulators(&self) -> &[f32] {
        &self.sym_acc
    }
}

/// One adaptive update of a row: the squared gradient is accumulated first,
/// then each coordinate moves by lr0 * g / sqrt(acc + eps), then the row is
/// pulled back into the unit ball. Zero-gradient coordinates never move,
/// whatever their accumulator holds.
fn adjust_row(params: &mut [f32], acc: &mut [f32], grad: &[f32], lr0: f32, eps: f32) {
    for c in 0..params.len() {
        let g = grad[c];
        acc[c] += g * g;
        params[c] -= lr0 * g / (acc[c] + eps).sqrt();
    }
    project_unit(params);
}

pub(crate) trait ParamStore {
    fn k(&self) -> usize;
    fn read_word_row(&mut self, row: u32, out: &mut [f32]);
    fn read_symbol_row(&mut self, row: u32, out: &mut [f32]);
    fn update_word_row(&mut self, row: u32, grad: &[f32], lr0: f32);
    fn update_symbol_row(&mut self, row: u32, grad: &[f32], lr0: f32);
}

/// Direct single-owner access to the model and accumulators.
pub(crate) struct ExclusiveStore<'a> {
    pub model: &'a mut EmbeddingModel,
    pub state: &'a mut AdagradState,
}

impl ParamStore for ExclusiveStore<'_> {
    fn k(&self) -> usize {
        self.model.k()
    }

    fn read_word_row(&mut self, row: u32, out: &mut [f32]) {
        out.copy_from_slice(self.model.word_row(row));
    }

    fn read_symbol_row(&mut self, row: u32, out: &mut [f32]) {
        out.copy_from_slice(self.model.symbol_row(row));
    }

    fn update_word_row(&mut self, row: u32, grad: &[f32], lr0: f32) {
        let k = self.model.k();
        let base = row as usize * k;
        let acc = &mut self.state.word_acc[base..base + k];
        adjust_row(self.model.word_row_mut(row), acc, grad, lr0, self.state.epsilon);
    }

    fn update_symbol_row(&mut self, row: u32, grad: &[f32], lr0: f32) {
        let k = self.model.k();
        let base = row as usize * k;
        let acc = &mut self.state.sym_acc[base..base + k];
        adjust_row(self.model.symbol_row_mut(row), acc, grad, lr0, self.state.epsilon);
    }
}

fn atomize(values: &[f32]) -> Vec<AtomicU32> {
    values.iter().map(|v| AtomicU32::new(v.to_bits())).collect()
}

fn load_into(cells: &[AtomicU32], out: &mut [f32]) {
    for (o, c) in out.iter_mut().zip(cells) {
        *o = f32::from_bits(c.load(Ordering::Relaxed));
    }
}

fn store_from(cells: &[AtomicU32], values: &[f32]) {
    for (c, v) in cells.iter().zip(values) {
        c.store(v.to_bits(), Ordering::Relaxed);
    }
}

/// Shared weight mirror for the parallel mode. Each f32 lives in an atomic
/// cell; workers read a row, compute the update locally, and write the row
/// back. Interleaved writers can drop each other's updates, never tear a
/// float.
pub(crate) struct AtomicTables {
    k: usize,
    epsilon: f32,
    words: Vec<AtomicU32>,
    syms: Vec<AtomicU32>,
    word_acc: Vec<AtomicU32>,
    sym_acc: Vec<AtomicU32>,
}

impl AtomicTables {
    pub fn snapshot(model: &EmbeddingModel, state: &AdagradState) -> Self {
        AtomicTables {
            k: model.k(),
            epsilon: state.epsilon,
            words: atomize(model.words_flat()),
            syms: atomize(model.syms_flat()),
            word_acc: atomize(&state.word_acc),
            sym_acc: atomize(&state.sym_acc),
        }
    }

    /// Copies current values back into the owned model and accumulators.
    /// Callers must have joined all workers first.
    pub fn write_back(&self, model: &mut EmbeddingModel, state: &mut AdagradState) {
        load_into(&self.words, model.words_flat_mut());
        load_into(&self.syms, model.syms_flat_mut());
        load_into(&self.word_acc, &mut state.word_acc);
        load_into(&self.sym_acc, &mut state.sym_acc);
    }

    /// A worker's handle: shares the tables, owns its scratch rows.
    pub fn view(&self) -> AtomicView<'_> {
        AtomicView {
            tables: self,
            row_buf: vec![0.0; self.k],
            acc_buf: vec![0.0; self.k],
        }
    }
}

pub(crate) struct AtomicView<'a> {
    tables: &'a AtomicTables,
    row_buf: Vec<f32>,
    acc_buf: Vec<f32>,
}

impl AtomicView<'_> {
    fn update(&mut self, cells: &[AtomicU32], acc_cells: &[AtomicU32], grad: &[f32], lr0: f32) {
        load_into(cells, &mut self.row_buf);
        load_into(acc_cells, &mut self.acc_buf);
        adjust_row(&mut self.row_buf, &mut self.acc_buf, grad, lr0, self.tables.epsilon);
        store_from(acc_cells, &self.acc_buf);
        store_from(cells, &self.row_buf);
    }
}

impl ParamStore for AtomicView<'_> {
    fn k(&self) -> usize {
        self.tables.k
    }

    fn read_word_row(&mut self, row: u32, out: &mut [f32]) {
        let k = self.tables.k;
        let base = row as usize * k;
        load_into(&self.tables.words[base..base + k], out);
    }

    fn read_symbol_row(&mut self, row: u32, out: &mut [f32]) {
        let k = self.tables.k;
        let base = row as usize * k;
        load_into(&self.tables.syms[base..base + k], out);
    }

    fn update_word_row(&mut self, row: u32, grad: &[f32], lr0: f32) {
        let t = self.tables;
        let base = row as usize * t.k;
        self.update(&t.words[base..base + t.k], &t.word_acc[base..base + t.k], grad, lr0);
    }

    fn update_symbol_row(&mut self, row: u32, grad: &[f32], lr0: f32) {
        let t = self.tables;
        let base = row as usize * t.k;
        self.update(&t.syms[base..base + t.k], &t.sym_acc[base..base + t.k], grad, lr0);
    }
}
