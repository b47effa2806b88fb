# Service layer: numerics, experiments and the run store
