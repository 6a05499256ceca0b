#ifndef MTFODF_MODELS_HPP
#define MTFODF_MODELS_HPP

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtfodf/dataio.hpp"
#include "mtfodf/nn.hpp"

namespace mtfodf::models {

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  void check() const;
};

// raw network outputs; fraction clamping happens only at evaluation output
struct Prediction {
  Eigen::VectorXd fodf_sh;
  Eigen::Vector3d fractions;
};

// Composite MSE: mean over samples of alpha * |dSH|^2 + beta * |dP|^2.
// When `grads` is given, fills d(loss)/d(prediction) per sample.
double composite_loss(const std::vector<Prediction>& preds, const std::vector<Eigen::VectorXd>& target_sh,
                      const std::vector<Eigen::Vector3d>& target_fractions, const LossWeights& weights,
                      std::vector<Prediction>* grads = nullptr);

// training data in matrix form; patches kept per-sample
struct Dataset {
  Eigen::MatrixXd inputs;          // m x n_coeffs (voxel models)
  std::vector<nn::Tensor> patches; // m patch tensors [3,3,3,n_coeffs]
  Eigen::MatrixXd target_sh;       // m x n_coeffs
  Eigen::MatrixXd target_fractions; // m x 3

  bool is_patch() const { return !patches.empty(); }
  size_t size() const { return is_patch() ? patches.size() : static_cast<size_t>(inputs.rows()); }

  static Dataset from_voxels(const std::vector<io::VoxelSample>& samples);
  static Dataset from_patches(const std::vector<io::PatchSample>& samples);
  Dataset subset(const std::vector<size_t>& idx) const;
};

class Model {
public:
  virtual ~Model() = default;
  virtual std::string architecture() const = 0;
  virtual uint64_t init_seed() const = 0;
  virtual nn::ParameterStore& params() = 0;
  virtual const nn::ParameterStore& params() const = 0;
  virtual bool wants_patches() const = 0;

  virtual Prediction predict(const Dataset& ds, size_t i) const = 0;

  // mean composite loss over the index subset; gradients accumulated into
  // `grads` (pre-zeroed by the caller) when non-null
  virtual double batch_loss(const Dataset& ds, const std::vector<size_t>& idx, const LossWeights& weights,
                            nn::ParameterStore* grads) const = 0;

  // exhaustive central finite differences with per-stage activation caching
  virtual nn::GradCheckReport gradient_check_full(const Dataset& ds, size_t sample,
                                                  const LossWeights& weights, double tolerance) const = 0;
};

std::unique_ptr<Model> build_resdnn(uint64_t seed);
std::unique_ptr<Model> build_rescnn(uint64_t seed);
std::unique_ptr<Model> build_model(const std::string& architecture, uint64_t seed);

struct TrainConfig {
  std::string architecture = "resdnn";
  int epochs = 150;
  int batch_size = 64;
  double learning_rate = 1e-4;
  LossWeights loss_weights;
  uint64_t seed = 0;
  int patience = 10;

  void check() const;
  nlohmann::ordered_json to_json() const;
};

struct EpochLog {
  int epoch;
  double train_loss;
  double val_loss;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

// Seeded-shuffle minibatch Adam; the model is left holding the parameters of
// the epoch with the best validation loss.
TrainResult train(Model& model, const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set);

struct VolumePrediction {
  io::Volume4D fodf;
  io::Volume4D fractions;         // raw network outputs
  io::Volume4D fractions_clamped; // clamped to [0,1] for evaluation
};

VolumePrediction predict_volume(const Model& model, const io::Volume4D& input_sh, const io::Volume4D& mask);

// model.json manifest + raw little-endian float64 payload in manifest order
void save_model(const Model& model, const std::string& dir, const nlohmann::ordered_json& training_info);
std::unique_ptr<Model> load_model(const std::string& dir);

inline constexpr const char* kShConvention = "real even-order SH, Condon-Shortley phase, "
                                             "m<0 sine / m>0 cosine, index l(l+1)/2+m";

} // namespace mtfodf::models

#endif
