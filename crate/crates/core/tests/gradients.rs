mod common;

use common::grad_suite as suite;

#[test]
fn elementwise_ops() {
    suite::elementwise_ops();
}

#[test]
fn detach_blocks_the_gradient() {
    suite::detach_blocks_the_gradient();
}

#[test]
fn losses() {
    suite::losses();
}

#[test]
fn convolutions() {
    suite::convolutions();
}

#[test]
fn biases_and_pooling() {
    suite::biases_and_pooling();
}

#[test]
fn matmul_both_operands() {
    suite::matmul_both_operands();
}

#[test]
fn lookup_and_straight_through() {
    suite::lookup_and_straight_through();
}

#[test]
fn causal_attention_all_operands() {
    suite::causal_attention_all_operands();
}

#[test]
fn composed_vqvae_loss_matches_frozen_surrogate() {
    suite::composed_vqvae_loss_matches_frozen_surrogate();
}
