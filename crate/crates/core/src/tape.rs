//! Batch-contiguous value storage.
//!
//! A tape holds one value per (slot, task) with the tasks of a slot stored
//! next to each other: `data[slot * n_tasks + task]`. A kernel walking the
//! slots of a shared pattern then touches contiguous memory for every task
//! in the batch, and each scalar operation broadcasts across the lanes.

use std::ops::Range;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchTape {
    n_slots: usize,
    n_tasks: usize,
    data: Vec<f64>,
}

impl BatchTape {
    pub fn zeros(n_slots: usize, n_tasks: usize) -> Self {
        Self {
            n_slots,
            n_tasks,
            data: vec![0.0; n_slots * n_tasks],
        }
    }

    /// Every task gets the same values.
    pub fn broadcast(values: &[f64], n_tasks: usize) -> Self {
        let mut data = Vec::with_capacity(values.len() * n_tasks);
        for &v in values {
            data.extend(std::iter::repeat_n(v, n_tasks));
        }
        Self {
            n_slots: values.len(),
            n_tasks,
            data,
        }
    }

    /// Wraps element-major data (`data[slot * n_tasks + task]`).
    pub fn from_element_major(n_slots: usize, n_tasks: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            n_slots * n_tasks,
            "data length does not match the shape"
        );
        Self {
            n_slots,
            n_tasks,
            data,
        }
    }

    /// Builds from per-task vectors (task-major input).
    pub fn from_task_major(tasks: &[Vec<f64>]) -> Self {
        let n_tasks = tasks.len();
        let n_slots = tasks.first().map_or(0, Vec::len);
        assert!(
            tasks.iter().all(|t| t.len() == n_slots),
            "ragged task vectors"
        );
        let mut tape = Self::zeros(n_slots, n_tasks);
        for (t, values) in tasks.iter().enumerate() {
            tape.set_task(t, values);
        }
        tape
    }

    pub fn to_task_major(&self) -> Vec<Vec<f64>> {
        (0..self.n_tasks).map(|t| self.task(t)).collect()
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, slot: usize, task: usize) -> f64 {
        self.data[slot * self.n_tasks + task]
    }

    #[inline]
    pub fn set(&mut self, slot: usize, task: usize, value: f64) {
        self.data[slot * self.n_tasks + task] = value;
    }

    /// The lanes of one slot.
    #[inline]
    pub fn slot(&self, slot: usize) -> &[f64] {
        &self.data[slot * self.n_tasks..(slot + 1) * self.n_tasks]
    }

    #[inline]
    pub fn slot_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.data[slot * self.n_tasks..(slot + 1) * self.n_tasks]
    }

    /// Gathers one task's values.
    pub fn task(&self, task: usize) -> Vec<f64> {
        (0..self.n_slots).map(|s| self.get(s, task)).collect()
    }

    pub fn set_task(&mut self, task: usize, values: &[f64]) {
        assert_eq!(values.len(), self.n_slots);
        for (s, &v) in values.iter().enumerate() {
            self.set(s, task, v);
        }
    }

    /// Copies a contiguous range of tasks into a new, narrower tape (the
    /// mini-batch transposition).
    pub fn extract(&self, tasks: Range<usize>) -> Self {
        let mut out = Self::zeros(self.n_slots, tasks.len());
        self.extract_into(tasks, &mut out);
        out
    }

    /// Like [`extract`](Self::extract) but reuses `out`'s allocation.
    pub fn extract_into(&self, tasks: Range<usize>, out: &mut Self) {
        let width = tasks.len();
        out.reshape(self.n_slots, width);
        for s in 0..self.n_slots {
            let src = &self.data[s * self.n_tasks + tasks.start..s * self.n_tasks + tasks.end];
            out.data[s * width..(s + 1) * width].copy_from_slice(src);
        }
    }

    /// Writes a narrower tape back over a contiguous range of tasks.
    pub fn insert(&mut self, first_task: usize, block: &Self) {
        assert_eq!(block.n_slots, self.n_slots);
        assert!(first_task + block.n_tasks <= self.n_tasks);
        let width = block.n_tasks;
        for s in 0..self.n_slots {
            let dst = s * self.n_tasks + first_task;
            self.data[dst..dst + width].copy_from_slice(&block.data[s * width..(s + 1) * width]);
        }
    }

    /// Resizes in place, zeroing contents when the shape changes.
    pub fn reshape(&mut self, n_slots: usize, n_tasks: usize) {
        if self.n_slots != n_slots || self.n_tasks != n_tasks {
            self.n_slots = n_slots;
            self.n_tasks = n_tasks;
            self.data.clear();
            self.data.resize(n_slots * n_tasks, 0.0);
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }
}

/// Splits `0..n_tasks` into contiguous mini-batches of at most `width` tasks.
pub fn minibatch_ranges(n_tasks: usize, width: usize) -> Vec<Range<usize>> {
    assert!(width >= 1);
    (0..n_tasks)
        .step_by(width)
        .map(|start| start..(start + width).min(n_tasks))
        .collect()
}
