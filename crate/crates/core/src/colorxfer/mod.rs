//! Color branch: masked histogram matching, the training objectives and the
//! color-swapping network trained on unpaired UV textures.

mod histogram;
mod losses;
mod net;
mod train;

pub use histogram::{histogram_match, HistMatch, HIST_MASK_THRESHOLD};
pub use losses::{
    cyc_loss, hist_loss, hist_loss_graph, hist_terms, l1_graph, lsgan_fake, lsgan_real, mse_graph, region_target,
    HistTerm, LossBreakdown, LossWeights,
};
pub use net::{
    ColorNet, ColorNetConfig, ColorTransfer, Discriminator, FeatureStack, Generator, IdentityColor, COLOR_KIND,
    FEATURE_WIDTHS,
};
pub use train::{weights_from_checkpoint, ColorDataset, ColorStepLog, ColorTrainConfig, ColorTrainer};
