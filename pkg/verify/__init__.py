from verify.oracles import brute_force_assignment, exhaustive_chamfer, gaussian_posterior_oracle, mc_moments, quadrature_kl
