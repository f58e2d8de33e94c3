// Builds a small model, trains it briefly on generated scenes and prints
// the four metrics before and after.
#include <iostream>

#include "tfrd/tfrd.hpp"

int main() {
  tfrd::RunConfig cfg;
  cfg.model.channels = 32;
  cfg.model.stacks = 2;
  cfg.model.input_size = 32;
  cfg.iters = 60;
  cfg.batch = 4;
  cfg.lr = 1e-3;

  auto train = tfrd::to_tensors<float>(tfrd::generate_dataset(24, 32, cfg.seed), 32);
  tfrd::SaliencyModel<float> model(cfg.model);
  std::cout << "parameters: " << model.params().scalar_count() << "\n";
  std::cout << "before:\n" << tfrd::render_table({tfrd::evaluate_model(model, train, "train")});

  tfrd::TrainOptions opts;
  opts.write_files = false;
  opts.progress = &std::cout;
  opts.progress_every = 20;
  tfrd::train_model(model, train, cfg, opts);
  std::cout << "after:\n" << tfrd::render_table({tfrd::evaluate_model(model, train, "train")});
}
