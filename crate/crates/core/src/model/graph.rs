use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use super::{Parent, PlotModel, VertexRef, LAG_SUFFIX};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexKind {
    Phase,
    Task,
    Intensity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SliceVertex {
    pub name: String,
    pub kind: VertexKind,
    /// `true` for the slice-`t-1` copy.
    pub lagged: bool,
}

impl SliceVertex {
    pub fn label(&self) -> String {
        let mut s = self.name.clone();
        if self.lagged {
            s.push_str(LAG_SUFFIX);
        }
        s
    }
}

/// The explicit two-slice DAG over the components of `(ξ_{t-1}, ξ_t)`.
///
/// The first half of `vertices` is slice `t-1` (all founders), the second
/// half slice `t`, both ordered `W`, tasks, intensities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SliceGraph {
    pub vertices: Vec<SliceVertex>,
    pub edges: Vec<(usize, usize)>,
}

impl SliceGraph {
    pub fn of(model: &PlotModel) -> Self {
        let width = 1 + model.tasks.len() + model.channels.len();
        let offset = |v: VertexRef| match v {
            VertexRef::Phase => 0,
            VertexRef::Task(i) => 1 + i,
            VertexRef::Channel(c) => 1 + model.tasks.len() + c,
        };
        let mut vertices = Vec::with_capacity(2 * width);
        for lagged in [true, false] {
            vertices.push(SliceVertex {
                name: model.vertex_name(VertexRef::Phase).into(),
                kind: VertexKind::Phase,
                lagged,
            });
            vertices.extend(model.tasks.iter().map(|t| SliceVertex {
                name: t.name.clone(),
                kind: VertexKind::Task,
                lagged,
            }));
            vertices.extend(model.channels.iter().map(|c| SliceVertex {
                name: c.name.clone(),
                kind: VertexKind::Intensity,
                lagged,
            }));
        }
        let source = |p: Parent| if p.lagged { offset(p.vertex) } else { width + offset(p.vertex) };
        let mut edges = alloc::vec![(0, width)];
        for (i, task) in model.tasks.iter().enumerate() {
            let child = width + offset(VertexRef::Task(i));
            edges.extend(task.parents.iter().map(|&p| (source(p), child)));
        }
        for (c, channel) in model.channels.iter().enumerate() {
            let child = width + offset(VertexRef::Channel(c));
            edges.extend(channel.parents.iter().map(|&p| (source(p), child)));
        }
        edges.sort_unstable();
        edges.dedup();
        SliceGraph { vertices, edges }
    }

    pub fn index_of(&self, name: &str, lagged: bool) -> Option<usize> {
        self.vertices.iter().position(|v| v.name == name && v.lagged == lagged)
    }

    pub fn parents(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.1 == v).map(|e| e.0)
    }

    /// Edges as `(parent label, child label)` pairs.
    pub fn named_edges(&self) -> Vec<(String, String)> {
        self.edges.iter().map(|&(a, b)| (self.vertices[a].label(), self.vertices[b].label())).collect()
    }

    /// Vertices without parents.
    pub fn founders(&self) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&v| self.parents(v).next().is_none()).collect()
    }

    /// Unrolls slices `0..=k`: slice 0 holds founders, every later slice
    /// repeats the template edges.
    pub fn unroll(&self, k: u32) -> UnrolledGraph {
        let width = self.vertices.len() / 2;
        let template: Vec<&SliceVertex> = self.vertices[width..].iter().collect();
        let mut vertices = Vec::with_capacity(width * (k as usize + 1));
        for s in 0..=k {
            vertices.extend(template.iter().map(|v| (v.name.clone(), s)));
        }
        let mut edges = Vec::new();
        for s in 1..=k as usize {
            for &(a, b) in &self.edges {
                let from = if a < width { (s - 1) * width + a } else { s * width + (a - width) };
                edges.push((from, s * width + (b - width)));
            }
        }
        UnrolledGraph { vertices, edges }
    }
}

/// A 2TDBN unrolled into an ordinary BN over `k+1` slices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UnrolledGraph {
    /// `(name, slice)` pairs.
    pub vertices: Vec<(String, u32)>,
    pub edges: Vec<(usize, usize)>,
}

impl UnrolledGraph {
    /// Kahn's algorithm; `None` if there is a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.vertices.len();
        let mut indegree = alloc::vec![0usize; n];
        let mut children = alloc::vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            indegree[b] += 1;
            children[a].push(b);
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &c in &children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }
}

#[cfg(test)]
mod tests {
    use crate::model::ModelBuilder;

    #[test]
    fn phases_only_is_a_chain() {
        let m = ModelBuilder::new("chain", &["w0", "w1"]).build().unwrap();
        let g = m.slice_graph();
        assert_eq!(g.named_edges(), [("W@t-1".into(), "W".into())]);
        let u = g.unroll(3);
        assert_eq!(u.vertices.len(), 4);
        assert_eq!(u.edges, [(0, 1), (1, 2), (2, 3)]);
        assert!(u.is_acyclic());
    }

    #[test]
    fn previous_slice_is_all_founders() {
        let m = ModelBuilder::new("m", &["w0", "w1"])
            .task("a", 2, &["W", "a@t-1"], vec![vec![1.0, 0.0], vec![0.0, 1.0]])
            .channel("z", 2, &["a"], vec![vec![0.9, 0.1], vec![0.2, 0.8]])
            .build()
            .unwrap();
        let g = m.slice_graph();
        assert_eq!(g.founders(), [0, 1, 2]);
    }
}
