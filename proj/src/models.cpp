#include "cprloop/models.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "base64.hpp"

namespace cprloop {

std::string_view to_string(Method m) {
    switch (m) {
        case Method::Logistic: return "logistic";
        case Method::Ridge: return "ridge";
        case Method::LDA: return "lda";
    }
    return "?";
}

std::string_view to_string(Task t) { return t == Task::Force ? "force" : "pose"; }

Method parse_method(std::string_view s) {
    if (s == "logistic") return Method::Logistic;
    if (s == "ridge") return Method::Ridge;
    if (s == "lda") return Method::LDA;
    throw Error(Errc::InvalidArgument, "unknown method '" + std::string(s) + "'");
}

Task parse_task(std::string_view s) {
    if (s == "force") return Task::Force;
    if (s == "pose") return Task::Pose;
    throw Error(Errc::InvalidArgument, "unknown task '" + std::string(s) + "'");
}

std::vector<std::string> default_classes(Task task) {
    std::vector<std::string> out;
    if (task == Task::Force)
        for (auto c : kAllForces) out.emplace_back(to_string(c));
    else
        for (auto c : kAllPoses) out.emplace_back(to_string(c));
    return out;
}

std::size_t TrainedModel::param_count() const {
    auto c = static_cast<std::size_t>(classes.size());
    if (method == Method::LDA) {
        auto k = static_cast<std::size_t>(means.cols());
        return c * k + k * (k + 1) / 2 + c;
    }
    return static_cast<std::size_t>(weights.size());
}

int TrainedModel::feature_dim() const {
    return static_cast<int>(method == Method::LDA ? means.cols() : weights.rows() - 1);
}

int TrainedModel::input_dim() const { return pca ? pca->d() : feature_dim(); }

void TrainedModel::finalize() {
    if (method != Method::LDA) return;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(covariance);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-15)
        throw Error(Errc::SingularSystem, "pooled covariance is not positive definite");
    coef = ldlt.solve(means.transpose());
    bias.resize(means.rows());
    for (Eigen::Index c = 0; c < means.rows(); ++c)
        bias[c] = -0.5 * means.row(c).dot(coef.col(c)) + std::log(priors[c]);
}

namespace {

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& Z) {
    Eigen::MatrixXd A(Z.rows(), Z.cols() + 1);
    A.leftCols(Z.cols()) = Z;
    A.col(Z.cols()).setOnes();
    return A;
}

Eigen::MatrixXd one_hot(const std::vector<int>& y, int classes) {
    Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(y.size()), classes);
    for (std::size_t i = 0; i < y.size(); ++i) Y(static_cast<Eigen::Index>(i), y[i]) = 1.0;
    return Y;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd P = logits;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        double m = P.row(i).maxCoeff();
        P.row(i) = (P.row(i).array() - m).exp();
        P.row(i) /= P.row(i).sum();
    }
    return P;
}

double cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& y) {
    double loss = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        double m = logits.row(i).maxCoeff();
        double lse = m + std::log((logits.row(i).array() - m).exp().sum());
        loss += lse - logits(i, y[static_cast<std::size_t>(i)]);
    }
    return loss / static_cast<double>(logits.rows());
}

void fit_lda(TrainedModel& m, const Eigen::MatrixXd& Z, const std::vector<int>& y, double shrinkage) {
    const auto n = Z.rows(), d = Z.cols();
    const auto C = static_cast<Eigen::Index>(m.classes.size());
    m.means = Eigen::MatrixXd::Zero(C, d);
    m.priors = Eigen::VectorXd::Zero(C);
    for (Eigen::Index i = 0; i < n; ++i) {
        m.means.row(y[i]) += Z.row(i);
        m.priors[y[i]] += 1.0;
    }
    for (Eigen::Index c = 0; c < C; ++c) m.means.row(c) /= m.priors[c];
    m.priors /= static_cast<double>(n);

    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::RowVectorXd r = Z.row(i) - m.means.row(y[i]);
        S.noalias() += r.transpose() * r;
    }
    S /= static_cast<double>(n - C);
    double scale = S.trace() / static_cast<double>(d);
    S.diagonal().array() += shrinkage * scale;
    m.covariance = S;
    m.finalize();
}

void fit_ridge(TrainedModel& m, const Eigen::MatrixXd& Z, const std::vector<int>& y, double lambda) {
    Eigen::MatrixXd A = with_intercept(Z);
    Eigen::MatrixXd G = A.transpose() * A;
    G.diagonal().array() += lambda;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-15)
        throw Error(Errc::SingularSystem, "ridge normal matrix is singular");
    m.weights = ldlt.solve(A.transpose() * one_hot(y, static_cast<int>(m.classes.size())));
}

void fit_logistic(TrainedModel& m, const Eigen::MatrixXd& Z, const std::vector<int>& y, const LogisticConfig& cfg) {
    // Descend on standardized columns, then fold the scaling back into W.
    const Eigen::RowVectorXd mu = Z.colwise().mean();
    Eigen::RowVectorXd sd = ((Z.rowwise() - mu).array().square().colwise().mean()).sqrt();
    for (auto& v : sd) v = v > 0.0 ? v : 1.0;
    const Eigen::MatrixXd A = with_intercept((Z.rowwise() - mu).array().rowwise() / sd.array());
    const Eigen::MatrixXd Y = one_hot(y, static_cast<int>(m.classes.size()));
    const double n = static_cast<double>(Z.rows());
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(A.cols(), Y.cols());
    double lr = cfg.learning_rate;
    double loss = cross_entropy(A * W, y);
    m.loss_history = {loss};
    for (int it = 0; it < cfg.max_iterations; ++it) {
        Eigen::MatrixXd grad = A.transpose() * (softmax_rows(A * W) - Y) / n;
        if (grad.norm() < cfg.tolerance) break;
        Eigen::MatrixXd candidate = W - lr * grad;
        double next = cross_entropy(A * candidate, y);
        if (std::isfinite(next) && next <= loss) {
            W = std::move(candidate);
            loss = next;
            m.loss_history.push_back(loss);
        } else {
            lr *= 0.5;  // rejected step
            if (lr < 1e-300) break;
        }
    }
    const Eigen::Index d = Z.cols();
    Eigen::MatrixXd out(d + 1, W.cols());
    out.topRows(d) = W.topRows(d).array().colwise() / sd.transpose().array();
    out.row(d) = W.row(d) - mu * out.topRows(d);
    m.weights = out;
}

}  // namespace

TrainedModel fit(Method method, Task task, const Eigen::MatrixXd& X, const std::vector<int>& y,
                 const TrainConfig& cfg, std::vector<std::string> class_names, std::string trained_on) {
    if (class_names.empty()) class_names = default_classes(task);
    const auto C = static_cast<int>(class_names.size());
    if (C < 2) throw Error(Errc::InvalidArgument, "need at least two classes");
    if (X.cols() < 1) throw Error(Errc::InvalidArgument, "feature dimension must be positive");
    if (static_cast<std::size_t>(X.rows()) != y.size())
        throw Error(Errc::DimensionMismatch, "X rows and y length differ");
    if (X.rows() < 2 * C) throw Error(Errc::InvalidArgument, "need at least two samples per class on average");
    if (!X.allFinite()) throw Error(Errc::NonFinite, "training features contain non-finite values");
    if (!(cfg.lda_shrinkage >= 0.0) || !(cfg.ridge_lambda >= 0.0) || !(cfg.logistic.learning_rate > 0.0))
        throw Error(Errc::InvalidArgument, "invalid hyperparameters");
    std::vector<int> support(static_cast<std::size_t>(C), 0);
    for (int label : y) {
        if (label < 0 || label >= C) throw Error(Errc::InvalidArgument, "label out of range");
        ++support[static_cast<std::size_t>(label)];
    }
    for (int c = 0; c < C; ++c)
        if (support[static_cast<std::size_t>(c)] == 0)
            throw Error(Errc::MissingClass, "class '" + class_names[static_cast<std::size_t>(c)] + "' has no samples");

    TrainedModel m;
    m.method = method;
    m.task = task;
    m.classes = std::move(class_names);
    m.trained_on = std::move(trained_on);

    bool use_pca = task == Task::Force ? cfg.force_pca : cfg.pose_pca;
    Eigen::MatrixXd Z;
    if (use_pca) {
        m.pca = fit_pca(X, cfg.pca_threshold);
        Z = (X.rowwise() - m.pca->mean.transpose()) * m.pca->components.transpose();
    } else {
        Z = X;
    }

    switch (method) {
        case Method::LDA: fit_lda(m, Z, y, cfg.lda_shrinkage); break;
        case Method::Ridge: fit_ridge(m, Z, y, cfg.ridge_lambda); break;
        case Method::Logistic: fit_logistic(m, Z, y, cfg.logistic); break;
    }
    return m;
}

Prediction predict(const TrainedModel& model, const Eigen::VectorXd& x) {
    auto t0 = std::chrono::steady_clock::now();
    if (x.size() != model.input_dim())
        throw Error(Errc::DimensionMismatch,
                    "predict: got " + std::to_string(x.size()) + ", expected " + std::to_string(model.input_dim()));
    if (!x.allFinite()) throw Error(Errc::NonFinite, "predict input contains non-finite values");
    Eigen::VectorXd z = model.pca ? apply_pca(*model.pca, x) : x;

    Eigen::VectorXd s;
    if (model.method == Method::LDA) {
        s = model.coef.transpose() * z + model.bias;
    } else {
        const auto k = z.size();
        s = model.weights.topRows(k).transpose() * z + model.weights.row(k).transpose();
    }
    Prediction p;
    p.scores.assign(s.data(), s.data() + s.size());
    for (std::size_t c = 1; c < p.scores.size(); ++c)
        if (p.scores[c] > p.scores[static_cast<std::size_t>(p.label)]) p.label = static_cast<int>(c);
    p.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return p;
}

Evaluation evaluate(const TrainedModel& model, const Eigen::MatrixXd& X, const std::vector<int>& y) {
    if (static_cast<std::size_t>(X.rows()) != y.size())
        throw Error(Errc::DimensionMismatch, "X rows and y length differ");
    const auto C = model.classes.size();
    Evaluation ev;
    ev.n = y.size();
    ev.confusion.assign(C, std::vector<int>(C, 0));
    std::size_t correct = 0;
    double sum = 0.0, sumsq = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        auto p = predict(model, X.row(i).transpose());
        auto truth = static_cast<std::size_t>(y[static_cast<std::size_t>(i)]);
        ++ev.confusion.at(truth).at(static_cast<std::size_t>(p.label));
        if (static_cast<std::size_t>(p.label) == truth) ++correct;
        sum += p.elapsed_ms;
        sumsq += p.elapsed_ms * p.elapsed_ms;
    }
    if (ev.n > 0) {
        double n = static_cast<double>(ev.n);
        ev.accuracy = static_cast<double>(correct) / n;
        ev.mean_ms = sum / n;
        ev.std_ms = ev.n > 1 ? std::sqrt(std::max(0.0, (sumsq - sum * sum / n) / (n - 1))) : 0.0;
    }
    return ev;
}

// ---------------------------------------------------------------------------
// Bundle

namespace {

using ojson = nlohmann::ordered_json;

ojson pack(const Eigen::MatrixXd& m) {
    // Row-major payload regardless of Eigen's storage order.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    ojson j;
    j["shape"] = {m.rows(), m.cols()};
    j["b64"] = detail::base64_encode(detail::pack_f64_le(rm.data(), static_cast<std::size_t>(rm.size())));
    return j;
}

ojson pack(const Eigen::VectorXd& v) {
    ojson j;
    j["shape"] = {v.size()};
    j["b64"] = detail::base64_encode(detail::pack_f64_le(v.data(), static_cast<std::size_t>(v.size())));
    return j;
}

std::vector<double> unpack_values(const ojson& j, std::size_t expected) {
    auto values = detail::unpack_f64_le(detail::base64_decode(j.at("b64").get<std::string>()));
    if (values.size() != expected) throw Error(Errc::BadBundle, "array payload size does not match its shape");
    return values;
}

Eigen::MatrixXd unpack_matrix(const ojson& j) {
    auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2) throw Error(Errc::BadBundle, "expected a 2-D array");
    auto values = unpack_values(j, static_cast<std::size_t>(shape[0] * shape[1]));
    Eigen::MatrixXd m(shape[0], shape[1]);
    for (Eigen::Index r = 0; r < shape[0]; ++r)
        for (Eigen::Index c = 0; c < shape[1]; ++c) m(r, c) = values[static_cast<std::size_t>(r * shape[1] + c)];
    return m;
}

Eigen::VectorXd unpack_vector(const ojson& j) {
    auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 1) throw Error(Errc::BadBundle, "expected a 1-D array");
    auto values = unpack_values(j, static_cast<std::size_t>(shape[0]));
    return Eigen::Map<Eigen::VectorXd>(values.data(), shape[0]);
}

}  // namespace

std::string to_bundle_json(const TrainedModel& m) {
    ojson j;
    j["v"] = 1;
    j["method"] = std::string(to_string(m.method));
    j["task"] = std::string(to_string(m.task));
    j["classes"] = m.classes;
    j["trained_on"] = m.trained_on;
    j["param_count"] = m.param_count();
    if (m.pca) {
        ojson p;
        p["d"] = m.pca->d();
        p["k"] = m.pca->k();
        p["total_variance"] = m.pca->total_variance;
        p["mean"] = pack(m.pca->mean);
        p["components"] = pack(m.pca->components);
        p["explained_ratio"] = pack(Eigen::VectorXd(
            Eigen::Map<const Eigen::VectorXd>(m.pca->explained_ratio.data(),
                                              static_cast<Eigen::Index>(m.pca->explained_ratio.size()))));
        j["pca"] = std::move(p);
    } else {
        j["pca"] = nullptr;
    }
    ojson params;
    if (m.method == Method::LDA) {
        params["means"] = pack(m.means);
        params["covariance_upper"] = [&] {
            Eigen::VectorXd upper(m.covariance.rows() * (m.covariance.rows() + 1) / 2);
            Eigen::Index idx = 0;
            for (Eigen::Index r = 0; r < m.covariance.rows(); ++r)
                for (Eigen::Index c = r; c < m.covariance.cols(); ++c) upper[idx++] = m.covariance(r, c);
            return pack(upper);
        }();
        params["priors"] = pack(m.priors);
    } else {
        params["weights"] = pack(m.weights);
    }
    j["params"] = std::move(params);
    return j.dump(2);
}

TrainedModel from_bundle_json(const std::string& text) {
    TrainedModel m;
    try {
        auto j = ojson::parse(text);
        if (j.at("v").get<int>() != 1) throw Error(Errc::BadBundle, "unsupported bundle version");
        m.method = parse_method(j.at("method").get<std::string>());
        m.task = parse_task(j.at("task").get<std::string>());
        m.classes = j.at("classes").get<std::vector<std::string>>();
        m.trained_on = j.value("trained_on", "");
        if (!j.at("pca").is_null()) {
            const auto& p = j.at("pca");
            PcaProjection proj;
            proj.total_variance = p.at("total_variance").get<double>();
            proj.mean = unpack_vector(p.at("mean"));
            proj.components = unpack_matrix(p.at("components"));
            Eigen::VectorXd ratio = unpack_vector(p.at("explained_ratio"));
            proj.explained_ratio.assign(ratio.data(), ratio.data() + ratio.size());
            if (proj.components.cols() != proj.mean.size() ||
                static_cast<std::size_t>(proj.components.rows()) != proj.explained_ratio.size())
                throw Error(Errc::BadBundle, "inconsistent PCA shapes");
            m.pca = std::move(proj);
        }
        const auto& params = j.at("params");
        const auto C = static_cast<Eigen::Index>(m.classes.size());
        if (m.method == Method::LDA) {
            m.means = unpack_matrix(params.at("means"));
            Eigen::VectorXd upper = unpack_vector(params.at("covariance_upper"));
            const auto k = m.means.cols();
            if (m.means.rows() != C || upper.size() != k * (k + 1) / 2)
                throw Error(Errc::BadBundle, "inconsistent LDA shapes");
            m.covariance.resize(k, k);
            Eigen::Index idx = 0;
            for (Eigen::Index r = 0; r < k; ++r)
                for (Eigen::Index c = r; c < k; ++c) m.covariance(r, c) = m.covariance(c, r) = upper[idx++];
            m.priors = unpack_vector(params.at("priors"));
            if (m.priors.size() != C) throw Error(Errc::BadBundle, "inconsistent LDA priors");
            m.finalize();
        } else {
            m.weights = unpack_matrix(params.at("weights"));
            if (m.weights.cols() != C) throw Error(Errc::BadBundle, "inconsistent weight shape");
        }
        if (m.pca && m.pca->k() != m.feature_dim()) throw Error(Errc::BadBundle, "PCA rank differs from model input");
        if (j.at("param_count").get<std::size_t>() != m.param_count())
            throw Error(Errc::BadBundle, "param_count does not match payload");
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::BadBundle, e.what());
    } catch (const std::invalid_argument& e) {
        throw Error(Errc::BadBundle, e.what());
    }
    return m;
}

void save_bundle(const std::string& path, const TrainedModel& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(Errc::Io, "cannot open " + path + " for writing");
    os << to_bundle_json(model) << '\n';
}

TrainedModel load_bundle(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Errc::Io, "cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_bundle_json(ss.str());
}

}  // namespace cprloop
