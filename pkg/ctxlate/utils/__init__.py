from .losses_and_gradients import (LossWeights, LossBreakdown, GENERATOR_TERMS,
                                   loss_discriminator, discriminator_terms, loss_cycle,
                                   loss_adversarial_G, loss_tv, psi, loss_air, sobel_gradients,
                                   gradient_magnitude, loss_grad, loss_idem,
                                   weighted_generator_loss, compose_generator_loss)
