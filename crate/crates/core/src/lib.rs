mod hash;
pub mod diff;
pub mod featurize;
pub mod gradcheck;
pub mod metrics;
pub mod losses;
pub mod model;
pub mod smiles;
pub mod synth;
pub mod training;
