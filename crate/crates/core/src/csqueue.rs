//! Class-wise synthetic data queue.
//!
//! K bounded FIFO sub-queues of sample ids. Each update picks P classes at
//! random and, for each, appends the Q samples pseudo-labeled with that
//! class that the detector scores as most likely synthetic. Sub-queues evict
//! oldest-first once they exceed their capacity; an id already present in
//! a sub-queue is never pushed again and keeps its original timestamp.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueueLayout {
    /// One sub-queue per class (capacity `N_q` each).
    ClassWise,
    /// A single pooled queue of capacity `K * N_q`; each update pushes the
    /// `P * Q` highest-scoring candidates regardless of pseudo-label.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry<Id> {
    pub id: Id,
    /// Pseudo-label at insertion time.
    pub class: usize,
    pub inserted_at: u64,
}

/// Effect of an update on one sub-queue.
#[derive(Clone, Debug, PartialEq)]
pub struct PushRecord<Id> {
    pub class: usize,
    pub pushed: Vec<Id>,
    pub evicted: Vec<Id>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueStats {
    /// Entries per pseudo-label class.
    pub per_class: Vec<usize>,
    pub total: usize,
}

impl QueueStats {
    /// Shannon entropy (nats) of the per-class occupancy distribution.
    pub fn occupancy_entropy(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let t = self.total as f64;
        self.per_class
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / t;
                -p * p.ln()
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsQueue<Id> {
    layout: QueueLayout,
    num_classes: usize,
    capacity: usize,
    sub_queues: Vec<VecDeque<QueueEntry<Id>>>,
    clock: u64,
}

impl<Id: Clone + PartialEq> CsQueue<Id> {
    /// `num_classes` sub-queues of `queue_size` entries each.
    pub fn new(num_classes: usize, queue_size: usize) -> Self {
        Self::with_layout(QueueLayout::ClassWise, num_classes, queue_size)
    }

    pub fn with_layout(layout: QueueLayout, num_classes: usize, queue_size: usize) -> Self {
        let (n, capacity) = match layout {
            QueueLayout::ClassWise => (num_classes, queue_size),
            QueueLayout::Pooled => (1, num_classes * queue_size),
        };
        Self {
            layout,
            num_classes,
            capacity,
            sub_queues: vec![VecDeque::new(); n],
            clock: 0,
        }
    }

    pub fn layout(&self) -> QueueLayout {
        self.layout
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Capacity of each sub-queue.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sub_queues(&self) -> &[VecDeque<QueueEntry<Id>>] {
        &self.sub_queues
    }

    pub fn is_empty(&self) -> bool {
        self.sub_queues.iter().all(VecDeque::is_empty)
    }

    pub fn len(&self) -> usize {
        self.sub_queues.iter().map(VecDeque::len).sum()
    }

    /// Mine the batch: choose `classes_per_update` classes uniformly without
    /// replacement, then push the top `enqueue_per_class` candidates of each.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        batch: &[Id],
        pseudo_labels: &[usize],
        synth_scores: &[f64],
        classes_per_update: usize,
        enqueue_per_class: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<PushRecord<Id>>> {
        self.check_inputs(batch, pseudo_labels, synth_scores)?;
        if classes_per_update == 0 || classes_per_update > self.num_classes {
            return Err(Error::Precondition(format!(
                "classes_per_update {} outside [1, {}]",
                classes_per_update, self.num_classes
            )));
        }
        match self.layout {
            QueueLayout::ClassWise => {
                let mut classes = index::sample(rng, self.num_classes, classes_per_update).into_vec();
                classes.sort_unstable();
                self.update_with_classes(batch, pseudo_labels, synth_scores, &classes, enqueue_per_class)
            }
            QueueLayout::Pooled => {
                self.clock += 1;
                let all: Vec<usize> = (0..batch.len()).collect();
                let rec = self.push_top(0, &all, batch, pseudo_labels, synth_scores, classes_per_update * enqueue_per_class);
                Ok(vec![rec])
            }
        }
    }

    /// Deterministic core of [`update`](Self::update) for an explicit class
    /// selection (class-wise layout).
    pub fn update_with_classes(
        &mut self,
        batch: &[Id],
        pseudo_labels: &[usize],
        synth_scores: &[f64],
        classes: &[usize],
        enqueue_per_class: usize,
    ) -> Result<Vec<PushRecord<Id>>> {
        self.check_inputs(batch, pseudo_labels, synth_scores)?;
        if self.layout != QueueLayout::ClassWise {
            return Err(Error::Precondition("explicit class selection needs the class-wise layout".into()));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= self.num_classes) {
            return Err(Error::Precondition(format!("class {c} out of range")));
        }
        self.clock += 1;
        let mut out = Vec::with_capacity(classes.len());
        for &c in classes {
            let members: Vec<usize> = (0..batch.len()).filter(|&i| pseudo_labels[i] == c).collect();
            out.push(self.push_top(c, &members, batch, pseudo_labels, synth_scores, enqueue_per_class));
        }
        Ok(out)
    }

    fn check_inputs(&self, batch: &[Id], pseudo_labels: &[usize], synth_scores: &[f64]) -> Result<()> {
        if batch.len() != pseudo_labels.len() || batch.len() != synth_scores.len() {
            return Err(Error::Shape(format!(
                "queue update with {} ids, {} pseudo-labels, {} scores",
                batch.len(),
                pseudo_labels.len(),
                synth_scores.len()
            )));
        }
        if let Some(&c) = pseudo_labels.iter().find(|&&c| c >= self.num_classes) {
            return Err(Error::Precondition(format!("pseudo-label {c} out of range")));
        }
        Ok(())
    }

    /// Push the `take` highest-scoring members (ties to the lower batch
    /// index) that are not already queued in sub-queue `slot`.
    fn push_top(
        &mut self,
        slot: usize,
        members: &[usize],
        batch: &[Id],
        pseudo_labels: &[usize],
        synth_scores: &[f64],
        take: usize,
    ) -> PushRecord<Id> {
        let queue = &self.sub_queues[slot];
        let mut candidates: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| !queue.iter().any(|e| e.id == batch[i]))
            .collect();
        candidates.sort_by(|&a, &b| synth_scores[b].total_cmp(&synth_scores[a]).then(a.cmp(&b)));
        let mut pushed: Vec<Id> = Vec::new();
        let mut classes = Vec::new();
        for i in candidates {
            if pushed.len() == take {
                break;
            }
            if pushed.contains(&batch[i]) {
                continue;
            }
            pushed.push(batch[i].clone());
            classes.push(pseudo_labels[i]);
        }
        let queue = &mut self.sub_queues[slot];
        for (id, &class) in pushed.iter().zip(&classes) {
            queue.push_back(QueueEntry {
                id: id.clone(),
                class,
                inserted_at: self.clock,
            });
        }
        let mut evicted = Vec::new();
        while queue.len() > self.capacity {
            evicted.push(queue.pop_front().expect("nonempty").id);
        }
        PushRecord { class: slot, pushed, evicted }
    }

    /// `size` ids drawn uniformly with replacement from all queued entries,
    /// or `None` while the queue is empty.
    pub fn sample_batch(&self, size: usize, rng: &mut impl Rng) -> Option<Vec<Id>> {
        let total = self.len();
        if total == 0 || size == 0 {
            return None;
        }
        let flat: Vec<&Id> = self.sub_queues.iter().flat_map(|q| q.iter().map(|e| &e.id)).collect();
        Some((0..size).map(|_| flat[rng.random_range(0..total)].clone()).collect())
    }

    pub fn stats(&self) -> QueueStats {
        let mut per_class = vec![0; self.num_classes];
        for e in self.sub_queues.iter().flatten() {
            per_class[e.class] += 1;
        }
        QueueStats {
            total: per_class.iter().sum(),
            per_class,
        }
    }
}
