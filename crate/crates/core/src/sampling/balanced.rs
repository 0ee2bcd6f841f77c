use super::error::SamplingError;

/// Round-robin over tasks, cycling each task's samples with wraparound.
#[derive(Debug, Clone)]
pub struct BalancedTaskIter<T> {
    datasets: Vec<Vec<T>>,
    cursors: Vec<usize>,
    next_task: usize,
}

/// Unbounded stream of `(task index, sample)`.
pub fn balanced_task_iterator<T: Clone>(datasets: Vec<Vec<T>>) -> Result<BalancedTaskIter<T>, SamplingError> {
    if datasets.is_empty() {
        return Err(SamplingError::NoDatasets);
    }
    if let Some(i) = datasets.iter().position(Vec::is_empty) {
        return Err(SamplingError::EmptyDataset(i));
    }
    Ok(BalancedTaskIter {
        cursors: vec![0; datasets.len()],
        datasets,
        next_task: 0,
    })
}

impl<T: Clone> Iterator for BalancedTaskIter<T> {
    type Item = (usize, T);

    fn next(&mut self) -> Option<Self::Item> {
        let task = self.next_task;
        self.next_task = (task + 1) % self.datasets.len();
        let data = &self.datasets[task];
        let item = data[self.cursors[task] % data.len()].clone();
        self.cursors[task] += 1;
        Some((task, item))
    }
}
