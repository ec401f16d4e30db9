use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use super::{CorpusError, ImplicitDataset, Interaction, Rating};

/// Every rating, whatever its value, becomes one observed interaction.
/// Repeated (user, item) pairs collapse to the first occurrence.
pub fn to_implicit(ratings: &[Rating]) -> Vec<Interaction> {
    let mut seen: HashSet<(&str, &str)> = HashSet::with_capacity(ratings.len());
    ratings
        .iter()
        .filter(|r| seen.insert((r.user_id.as_str(), r.item_id.as_str())))
        .map(|r| Interaction::observed(r.user_id.clone(), r.item_id.clone()))
        .collect()
}

/// Removes users with fewer than `k` items and items with fewer than `k`
/// users, repeatedly, until both conditions hold at once.
///
/// Implemented as degree peeling: an edge is dropped once either endpoint
/// falls below `k`, and the neighbour's degree is decremented.
pub fn k_core_filter(dataset: &ImplicitDataset, k: usize) -> Result<ImplicitDataset, CorpusError> {
    if k == 0 {
        return Err(CorpusError::InvalidArgument("k must be at least 1".into()));
    }
    let edges = &dataset.interactions;
    let mut user_edges: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut item_edges: HashMap<&str, Vec<usize>> = HashMap::new();
    for (e, i) in edges.iter().enumerate() {
        user_edges.entry(&i.user_id).or_default().push(e);
        item_edges.entry(&i.item_id).or_default().push(e);
    }
    let mut user_deg: HashMap<&str, usize> = user_edges.iter().map(|(u, v)| (*u, v.len())).collect();
    let mut item_deg: HashMap<&str, usize> = item_edges.iter().map(|(i, v)| (*i, v.len())).collect();
    let mut alive = vec![true; edges.len()];

    #[derive(Clone, Copy)]
    enum Node<'a> {
        User(&'a str),
        Item(&'a str),
    }
    let mut queue: VecDeque<Node> = VecDeque::new();
    let mut removed_users: HashSet<&str> = HashSet::new();
    let mut removed_items: HashSet<&str> = HashSet::new();
    for (u, d) in &user_deg {
        if *d < k {
            queue.push_back(Node::User(u));
            removed_users.insert(u);
        }
    }
    for (i, d) in &item_deg {
        if *d < k {
            queue.push_back(Node::Item(i));
            removed_items.insert(i);
        }
    }

    while let Some(node) = queue.pop_front() {
        let incident = match node {
            Node::User(u) => &user_edges[u],
            Node::Item(i) => &item_edges[i],
        };
        for &e in incident {
            if !alive[e] {
                continue;
            }
            alive[e] = false;
            let edge = &edges[e];
            match node {
                Node::User(_) => {
                    let item = edge.item_id.as_str();
                    let d = item_deg.get_mut(item).unwrap();
                    *d -= 1;
                    if *d < k && removed_items.insert(item) {
                        queue.push_back(Node::Item(item));
                    }
                }
                Node::Item(_) => {
                    let user = edge.user_id.as_str();
                    let d = user_deg.get_mut(user).unwrap();
                    *d -= 1;
                    if *d < k && removed_users.insert(user) {
                        queue.push_back(Node::User(user));
                    }
                }
            }
        }
    }

    let interactions: Vec<Interaction> = edges
        .iter()
        .zip(&alive)
        .filter(|(_, a)| **a)
        .map(|(e, _)| e.clone())
        .collect();
    if interactions.is_empty() {
        return Err(CorpusError::EmptyAfterFiltering { k });
    }
    let kept_items: HashSet<&str> = interactions.iter().map(|i| i.item_id.as_str()).collect();
    let items: BTreeMap<_, _> = dataset
        .items
        .iter()
        .filter(|(id, _)| kept_items.contains(id.as_str()))
        .map(|(id, item)| (id.clone(), item.clone()))
        .collect();
    Ok(ImplicitDataset {
        source: dataset.source,
        items,
        interactions,
    })
}
