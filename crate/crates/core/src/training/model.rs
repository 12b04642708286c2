use crate::data::WindowSample;
use crate::decoder::{Decoder, DecoderCache, DecoderConfig};
use crate::encoder::{Encoder, EncoderCache, EncoderConfig, LatentState};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Gradients, ParamStore};

/// Encoder, decoder and their shared parameter store.
///
/// Parameters are registered encoder first, then decoder; that order is the
/// optimizer and checkpoint order.
#[derive(Debug, Clone)]
pub struct Model {
    encoder: Encoder,
    decoder: Decoder,
    params: ParamStore,
}

/// Forward state of one window kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct WindowForward {
    pub latent: LatentState,
    pub predictions: Vec<f64>,
    encoder_cache: EncoderCache,
    decoder_cache: DecoderCache,
}

impl Model {
    pub fn init(encoder: EncoderConfig, n_b: usize, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let n_xs = encoder.n_xs;
        let encoder = Encoder::init(encoder, &mut params, derive_seed(seed, 11))?;
        let decoder = Decoder::init(
            DecoderConfig::new(n_b, n_xs),
            &mut params,
            derive_seed(seed, 12),
        )?;
        Ok(Self {
            encoder,
            decoder,
            params,
        })
    }

    /// Binds existing parameters, checking every shape against the config.
    pub fn from_params(encoder: EncoderConfig, n_b: usize, params: ParamStore) -> Result<Self> {
        let n_xs = encoder.n_xs;
        let encoder = Encoder::bind(encoder, &params)?;
        let decoder = Decoder::bind(DecoderConfig::new(n_b, n_xs), &params)?;
        let expected = Model::init(encoder.config().clone(), n_b, 0)?;
        if expected.params.len() != params.len() {
            let extra = params
                .iter()
                .map(|(n, _, _)| n)
                .find(|n| expected.params.id(n).is_none());
            return Err(Error::Shape(format!(
                "unexpected parameter `{}` for this configuration",
                extra.unwrap_or("?")
            )));
        }
        Ok(Self {
            encoder,
            decoder,
            params,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn n_a(&self) -> usize {
        self.encoder.config().n_a
    }

    pub fn n_b(&self) -> usize {
        self.decoder.config().n_b
    }

    pub fn n_xs(&self) -> usize {
        self.encoder.config().n_xs
    }

    fn check_window(&self, w: &WindowSample<'_>) -> Result<()> {
        if w.n_a != self.n_a() || w.n_b != self.n_b() {
            return Err(Error::Shape(format!(
                "window is n_a = {}, n_b = {}; model expects n_a = {}, n_b = {}",
                w.n_a,
                w.n_b,
                self.n_a(),
                self.n_b()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, w: &WindowSample<'_>) -> Result<LatentState> {
        self.check_window(w)?;
        self.encoder
            .forward_channels(&self.params, w.history_channels())
    }

    /// Normalized voltage predictions for the window's horizon.
    pub fn predict(&self, w: &WindowSample<'_>) -> Result<Vec<f64>> {
        let latent = self.encode(w)?;
        self.decoder
            .rollout(&self.params, &latent, w.future_inputs())
    }

    pub fn forward_cached(&self, w: &WindowSample<'_>) -> Result<WindowForward> {
        self.check_window(w)?;
        let (latent, encoder_cache) = self
            .encoder
            .forward_cached(&self.params, w.history_channels())?;
        let (predictions, decoder_cache) =
            self.decoder
                .rollout_cached(&self.params, &latent, w.future_inputs())?;
        Ok(WindowForward {
            latent,
            predictions,
            encoder_cache,
            decoder_cache,
        })
    }

    /// Reverse pass for one window given the loss gradient on its
    /// predictions and the extra gradient arriving on its latent.
    pub fn backward(
        &self,
        forward: &WindowForward,
        d_predictions: &[f64],
        d_latent: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        let mut dx =
            self.decoder
                .backward(&self.params, &forward.decoder_cache, d_predictions, grads)?;
        for (a, b) in dx.iter_mut().zip(d_latent) {
            *a += b;
        }
        self.encoder
            .backward(&self.params, &forward.encoder_cache, &dx, grads)?;
        Ok(())
    }
}
