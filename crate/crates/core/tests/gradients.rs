//! Finite-difference checks of every hand-written gradient.

mod support;

use support::gradient_suite as suite;

#[test]
fn generator_vjp_matches_finite_differences() {
    suite::generator_vjp_matches_finite_differences();
}

#[test]
fn perceptual_embedder_vjp_matches_finite_differences() {
    suite::perceptual_embedder_vjp_matches_finite_differences();
}

#[test]
fn style_function_input_and_parameter_gradients() {
    suite::style_function_input_and_parameter_gradients();
}

#[test]
fn critic_input_gradient_matches_finite_differences() {
    suite::critic_input_gradient_matches_finite_differences();
}

#[test]
fn r1_parameter_gradient_via_dual_numbers() {
    suite::r1_parameter_gradient_via_dual_numbers();
}

#[test]
fn critic_objective_parameter_gradient() {
    suite::critic_objective_parameter_gradient();
}

#[test]
fn mapper_objective_gradient_per_term_and_combined() {
    suite::mapper_objective_gradient_per_term_and_combined();
}

#[test]
fn pooled_critic_input_gradient() {
    suite::pooled_critic_input_gradient();
}
