use latentbias::directions::centroid_difference_direction;
use latentbias::rng;
use latentbias::significance::{permutation_test_deaa, validate_direction, PermutationOptions, ValidationOptions};
use latentbias::synthetic::{generate_planted_space, PlantedConfig};

fn planted(bias: f64, seed: u64) -> latentbias::synthetic::PlantedSpace {
    generate_planted_space(&PlantedConfig {
        n_a: 60,
        n_b: 60,
        n_e: 30,
        n_p: 30,
        bias_strength: bias,
        noise_sigma: 1.0,
        e_alignment: 0.0,
        p_alignment: 0.0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn opts(seed: u64) -> ValidationOptions {
    ValidationOptions {
        n_random: 500,
        seed,
        alpha_corrected: 0.05 / 15.0,
    }
}

#[test]
fn random_direction_fails_validation() {
    let mut failed = 0;
    for seed in 0..20 {
        let s = planted(1.0, seed);
        let mut r = rng::stream(seed, 99);
        let mut d = centroid_difference_direction(&s.groups.a, &s.groups.b, &s.space).unwrap();
        d.label = "random".into();
        d.vector = rng::random_unit_vector(&mut r, s.space.dim());
        let v = validate_direction(&d, &s.groups.a, &s.groups.b, &s.space, &opts(seed)).unwrap();
        failed += !v.passed as usize;
    }
    assert!(failed >= 19, "{failed}/20 random directions failed");
}

#[test]
fn validation_is_monotone_in_bias_strength() {
    for seed in 0..20 {
        let mut was_passed = false;
        for bias in [0.0, 0.1, 0.25, 0.5, 1.0] {
            let s = planted(bias, seed);
            let d = centroid_difference_direction(&s.groups.a, &s.groups.b, &s.space).unwrap();
            let passed = validate_direction(&d, &s.groups.a, &s.groups.b, &s.space, &opts(seed))
                .unwrap()
                .passed;
            assert!(passed || !was_passed, "seed {seed}: passed flipped off at bias {bias}");
            was_passed = passed;
        }
        assert!(was_passed, "seed {seed}: strongest bias did not validate");
    }
}

#[test]
fn test_groups_orthogonal_to_the_bias_are_rarely_significant() {
    let mut quiet = 0;
    for seed in 0..100 {
        let s = planted(1.0, seed);
        let g = &s.groups;
        let r = permutation_test_deaa(&g.e, &g.p, &g.a, &g.b, &s.space, &PermutationOptions::new(499, seed)).unwrap();
        quiet += (r.p_value > 0.05) as usize;
    }
    assert!(quiet >= 90, "{quiet}/100 above 0.05");
}
