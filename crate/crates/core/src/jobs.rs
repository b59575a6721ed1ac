//! FIFO job identities, stored as runs so a batch of a thousand jobs costs
//! one entry.

use std::collections::VecDeque;

use crate::model::{Allocation, CompletedRun, Job};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct JobRun {
    first_id: u64,
    count: u64,
    arrival_slot: u64,
    first_position: u64,
}

/// Jobs waiting at each server, oldest first.
#[derive(Debug, Clone, Default)]
pub struct JobLedger {
    queues: Vec<VecDeque<JobRun>>,
    next_id: u64,
}

impl JobLedger {
    /// A ledger holding `q[i]` anonymous jobs at server `i`, all stamped
    /// with arrival slot 0.
    pub fn with_initial(q: &[u64]) -> Self {
        let mut ledger = JobLedger {
            queues: vec![VecDeque::new(); q.len()],
            next_id: 0,
        };
        ledger.admit(0, &Allocation { counts: q.to_vec() });
        ledger
    }

    /// Records a batch. Positions within the batch run over servers in
    /// index order.
    pub fn admit(&mut self, slot: u64, allocation: &Allocation) {
        let mut position = 0;
        for (server, &count) in allocation.counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            self.queues[server].push_back(JobRun {
                first_id: self.next_id,
                count,
                arrival_slot: slot,
                first_position: position,
            });
            self.next_id += count;
            position += count;
        }
    }

    /// Removes `departures[i]` jobs from the head of each queue.
    pub fn complete(&mut self, departures: &[u64]) -> Vec<CompletedRun> {
        let mut done = Vec::new();
        for (server, &d) in departures.iter().enumerate() {
            let mut left = d;
            let queue = &mut self.queues[server];
            while left > 0 {
                let head = queue.front_mut().expect("departure from an empty ledger queue");
                let take = left.min(head.count);
                done.push(CompletedRun {
                    server,
                    first_id: head.first_id,
                    count: take,
                    arrival_slot: head.arrival_slot,
                    first_position: head.first_position,
                });
                head.first_id += take;
                head.first_position += take;
                head.count -= take;
                left -= take;
                if head.count == 0 {
                    queue.pop_front();
                }
            }
        }
        done
    }

    pub fn queue_len(&self, server: usize) -> u64 {
        self.queues[server].iter().map(|r| r.count).sum()
    }

    /// Jobs waiting at `server`, head first.
    pub fn waiting(&self, server: usize) -> Vec<Job> {
        self.queues[server]
            .iter()
            .flat_map(|r| {
                (0..r.count).map(move |k| Job {
                    id: r.first_id + k,
                    arrival_slot: r.arrival_slot,
                    server,
                    position_in_batch: r.first_position + k,
                    completion_slot: None,
                })
            })
            .collect()
    }

    /// Ids handed out so far.
    pub fn issued(&self) -> u64 {
        self.next_id
    }
}
