#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cprloop/preprocess.hpp"

namespace cprloop {

enum class Method : std::uint8_t { Logistic, Ridge, LDA };
enum class Task : std::uint8_t { Force, Pose };

std::string_view to_string(Method m);
std::string_view to_string(Task t);
Method parse_method(std::string_view s);
Task parse_task(std::string_view s);

struct LogisticConfig {
    double learning_rate = 0.1;
    int max_iterations = 2000;
    double tolerance = 1e-8;  // on the gradient norm
};

struct TrainConfig {
    double lda_shrinkage = 1e-6;
    double ridge_lambda = 1.0;
    LogisticConfig logistic;
    std::uint64_t seed = 0;
    bool force_pca = true;   // Force task: PCA-reduce corrected peak frames
    bool pose_pca = false;   // Pose task: normalized frames used as-is
    double pca_threshold = 0.95;
};

struct TrainedModel {
    Method method = Method::LDA;
    Task task = Task::Force;
    std::optional<PcaProjection> pca;
    std::vector<std::string> classes;
    std::string trained_on;

    // LDA: class means (C x k), pooled regularized covariance (k x k), priors (C).
    Eigen::MatrixXd means;
    Eigen::MatrixXd covariance;
    Eigen::VectorXd priors;
    // Ridge / logistic: (k + 1) x C, last row is the intercept.
    Eigen::MatrixXd weights;

    // Linear discriminant form derived from the parameters above; not persisted.
    Eigen::MatrixXd coef;  // k x C
    Eigen::VectorXd bias;  // C

    // Logistic training trace (not persisted).
    std::vector<double> loss_history;

    /// Number of persisted classifier scalars (PCA excluded). LDA counts the
    /// covariance as its d(d+1)/2 upper triangle.
    std::size_t param_count() const;
    int input_dim() const;    // before PCA
    int feature_dim() const;  // after PCA

    /// Rebuilds coef/bias from the persisted parameters.
    void finalize();
};

struct Prediction {
    int label = 0;
    std::vector<double> scores;
    double elapsed_ms = 0.0;
};

struct Evaluation {
    double accuracy = 0.0;
    std::vector<std::vector<int>> confusion;  // [true][predicted]
    double mean_ms = 0.0;
    double std_ms = 0.0;
    std::size_t n = 0;
};

std::vector<std::string> default_classes(Task task);

/**
 * Trains one classifier. y holds class indices into class_names (task
 * defaults when empty). Requires n >= 2 * classes and every class present.
 * Throws MissingClass, NonFinite, SingularSystem, InvalidArgument.
 */
TrainedModel fit(Method method, Task task, const Eigen::MatrixXd& X, const std::vector<int>& y,
                 const TrainConfig& cfg = {}, std::vector<std::string> class_names = {},
                 std::string trained_on = {});

/// Features are the raw model inputs; the model applies its own PCA.
/// Ties go to the lowest class index.
Prediction predict(const TrainedModel& model, const Eigen::VectorXd& x);

Evaluation evaluate(const TrainedModel& model, const Eigen::MatrixXd& X, const std::vector<int>& y);

/// Model bundle (*.cprmodel.json): versioned JSON with base64 little-endian
/// float64 arrays.
std::string to_bundle_json(const TrainedModel& model);
TrainedModel from_bundle_json(const std::string& text);
void save_bundle(const std::string& path, const TrainedModel& model);
TrainedModel load_bundle(const std::string& path);

}  // namespace cprloop
