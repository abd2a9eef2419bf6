//! Feature layouts fed to the tree ensembles.
//!
//! A feature vector is the one-hot encoding of the state id followed by the
//! control features: one local control id for agent-local inputs, or all `m`
//! local ids for joint inputs.

pub type FeatureVector = Vec<f64>;

pub fn state_features(n_states: usize, x: usize) -> FeatureVector {
    let mut v = vec![0.0; n_states];
    v[x] = 1.0;
    v
}

pub fn local_features(n_states: usize, x: usize, a: usize) -> FeatureVector {
    let mut v = state_features(n_states, x);
    v.push(a as f64);
    v
}

pub fn joint_features(n_states: usize, x: usize, u: &[usize]) -> FeatureVector {
    let mut v = state_features(n_states, x);
    v.extend(u.iter().map(|&a| a as f64));
    v
}
