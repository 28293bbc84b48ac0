#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "cprloop/models.hpp"
#include "helpers.hpp"
#include "instances.hpp"

using namespace cprloop;

namespace {

// Two 2-d blobs ten standard deviations apart.
instances::Classification blobs(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0, 1);
    instances::Classification c;
    c.X.resize(40, 2);
    for (int i = 0; i < 40; ++i) {
        int label = i % 2;
        c.y.push_back(label);
        c.X(i, 0) = n(rng) + 10.0 * label;
        c.X(i, 1) = n(rng);
    }
    return c;
}

std::size_t bundle_scalars(const nlohmann::json& params) {
    std::size_t total = 0;
    for (const auto& [key, arr] : params.items()) {
        auto b64 = arr.at("b64").get<std::string>();
        std::size_t pad = b64.size() >= 2 ? (b64.end()[-1] == '=') + (b64.end()[-2] == '=') : 0;
        total += (b64.size() / 4 * 3 - pad) / 8;
    }
    return total;
}

}  // namespace

TEST_SUITE("models") {
    TEST_CASE("separable blobs") {
        auto c = blobs(1);
        auto cfg = instances::no_pca();
        auto lda = fit(Method::LDA, Task::Force, c.X, c.y, cfg, instances::names(2));
        CHECK(evaluate(lda, c.X, c.y).accuracy == 1.0);
        auto ridge = fit(Method::Ridge, Task::Force, c.X, c.y, cfg, instances::names(2));
        auto logit = fit(Method::Logistic, Task::Force, c.X, c.y, cfg, instances::names(2));
        for (int i = 0; i < c.X.rows(); ++i) {
            Eigen::VectorXd x = c.X.row(i).transpose();
            int a = predict(lda, x).label;
            CHECK(a == c.y[i]);
            CHECK(predict(ridge, x).label == a);
            CHECK(predict(logit, x).label == a);
        }
        Eigen::VectorXd mean_a = Eigen::VectorXd::Zero(2);
        for (int i = 0; i < c.X.rows(); i += 2) mean_a += c.X.row(i).transpose() / 20.0;
        auto p = predict(lda, mean_a);
        CHECK(p.label == 0);
        CHECK(p.scores[0] > p.scores[1]);
    }

    TEST_CASE("ties go to the lower class index") {
        // Symmetric classes at +-1 on one axis with identical spread: the origin is equidistant.
        Eigen::MatrixXd X(8, 2);
        X << -1, 0.5, -1, -0.5, -1.5, 0, -0.5, 0, 1, 0.5, 1, -0.5, 1.5, 0, 0.5, 0;
        std::vector<int> y{0, 0, 0, 0, 1, 1, 1, 1};
        auto m = fit(Method::LDA, Task::Force, X, y, instances::no_pca(), instances::names(2));
        auto p = predict(m, Eigen::Vector2d(0, 0));
        CHECK(p.scores[0] == doctest::Approx(p.scores[1]));
        CHECK(p.label == 0);
    }

    TEST_CASE("LDA matches the textbook discriminant oracle") {
        std::mt19937_64 rng(33);
        for (int trial = 0; trial < 40; ++trial) {
            auto inst = instances::random_instance(rng);
            auto cfg = instances::no_pca();
            cfg.lda_shrinkage = trial % 2 ? 0.0 : 1e-6;
            auto m = fit(Method::LDA, Task::Force, inst.X, inst.y, cfg, instances::names(inst.classes));
            auto ref = oracle::lda_fit(testing::to_mat(inst.X), inst.y, inst.classes, cfg.lda_shrinkage);
            std::normal_distribution<double> n(0, 4);
            for (int q = 0; q < 25; ++q) {
                Eigen::VectorXd x(inst.X.cols());
                for (auto& v : x) v = n(rng);
                auto p = predict(m, x);
                auto s = oracle::lda_scores(ref, testing::to_vec(x));
                double scale = 1.0;
                for (double v : s) scale = std::max(scale, std::fabs(v));
                for (std::size_t c = 0; c < s.size(); ++c) CHECK(std::fabs(p.scores[c] - s[c]) <= 1e-8 * scale);
                if (oracle::margin(s) > 1e-9 * scale) CHECK(p.label == oracle::argmax(s));
            }
        }
    }

    TEST_CASE("ridge satisfies its normal equations") {
        std::mt19937_64 rng(34);
        for (int trial = 0; trial < 40; ++trial) {
            auto inst = instances::random_instance(rng);
            auto cfg = instances::no_pca();
            auto m = fit(Method::Ridge, Task::Force, inst.X, inst.y, cfg, instances::names(inst.classes));
            const auto n = inst.X.rows(), d = inst.X.cols() + 1;
            Eigen::MatrixXd A(n, d);
            A << inst.X, Eigen::VectorXd::Ones(n);
            Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(n, inst.classes);
            for (Eigen::Index i = 0; i < n; ++i) Y(i, inst.y[i]) = 1;
            Eigen::MatrixXd G = A.transpose() * A + cfg.ridge_lambda * Eigen::MatrixXd::Identity(d, d);
            Eigen::MatrixXd R = G * m.weights - A.transpose() * Y;
            double scale = std::max(1.0, (A.transpose() * Y).cwiseAbs().maxCoeff());
            CHECK(R.cwiseAbs().maxCoeff() < 1e-8 * scale);

            auto w = oracle::ridge_fit(testing::to_mat(inst.X), inst.y, inst.classes, cfg.ridge_lambda);
            for (Eigen::Index i = 0; i < n; ++i) {
                auto s = oracle::affine_scores(w, testing::to_vec(inst.X.row(i).transpose()));
                if (oracle::margin(s) > 1e-9) CHECK(predict(m, inst.X.row(i).transpose()).label == oracle::argmax(s));
            }
        }
    }

    TEST_CASE("logistic loss never increases") {
        std::mt19937_64 rng(35);
        for (int trial = 0; trial < 20; ++trial) {
            auto inst = instances::random_instance(rng);
            auto cfg = instances::no_pca();
            cfg.logistic.max_iterations = 300;
            auto m = fit(Method::Logistic, Task::Force, inst.X, inst.y, cfg, instances::names(inst.classes));
            REQUIRE(m.loss_history.size() >= 2);
            for (std::size_t k = 1; k < m.loss_history.size(); ++k) CHECK(m.loss_history[k] <= m.loss_history[k - 1]);
            auto w = testing::to_mat(m.weights);
            auto x = testing::to_mat(inst.X);
            CHECK(oracle::softmax_loss(w, x, inst.y) == doctest::Approx(m.loss_history.back()).epsilon(1e-10));
            for (std::size_t i = 0; i < x.size(); ++i) {
                auto s = oracle::affine_scores(w, x[i]);
                if (oracle::margin(s) > 1e-9) CHECK(predict(m, inst.X.row(i).transpose()).label == oracle::argmax(s));
            }
        }
    }

    TEST_CASE("argmax survives a monotone transform of the scores") {
        std::mt19937_64 rng(36);
        auto inst = instances::random_instance(rng);
        auto m = fit(Method::LDA, Task::Force, inst.X, inst.y, instances::no_pca(), instances::names(inst.classes));
        for (Eigen::Index i = 0; i < inst.X.rows(); ++i) {
            auto p = predict(m, inst.X.row(i).transpose());
            oracle::Vec t;
            for (double s : p.scores) t.push_back(std::atan(s) * 3 + 1);
            CHECK(oracle::argmax(t) == p.label);
        }
    }

    TEST_CASE("consistent feature permutation keeps predictions") {
        std::mt19937_64 rng(37);
        auto inst = instances::random_instance(rng, 60, 8);
        std::vector<int> perm(inst.X.cols());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Eigen::MatrixXd P(inst.X.rows(), inst.X.cols());
        for (int j = 0; j < inst.X.cols(); ++j) P.col(j) = inst.X.col(perm[j]);
        for (auto method : {Method::LDA, Method::Ridge, Method::Logistic}) {
            auto a = fit(method, Task::Force, inst.X, inst.y, {}, instances::names(inst.classes));
            auto b = fit(method, Task::Force, P, inst.y, {}, instances::names(inst.classes));
            for (Eigen::Index i = 0; i < inst.X.rows(); ++i) {
                auto pa = predict(a, inst.X.row(i).transpose());
                if (oracle::margin(pa.scores) < 1e-6) continue;
                CHECK(predict(b, P.row(i).transpose()).label == pa.label);
            }
        }
    }

    TEST_CASE("param_count formula and bundle payload agree") {
        std::mt19937_64 rng(38);
        std::normal_distribution<double> n(0, 1);
        Eigen::MatrixXd X(120, 40);
        std::vector<int> y;
        for (int i = 0; i < 120; ++i) {
            y.push_back(i % 4);
            for (int j = 0; j < 40; ++j) X(i, j) = n(rng) + (j == y.back() ? 3 : 0);
        }
        auto m = fit(Method::LDA, Task::Pose, X, y);
        CHECK(m.param_count() == 4 * 40 + 40 * 41 / 2 + 4);
        auto j = nlohmann::json::parse(to_bundle_json(m));
        CHECK(j["param_count"].get<std::size_t>() == m.param_count());
        CHECK(bundle_scalars(j["params"]) == m.param_count());
        CHECK(m.param_count() < 1000);
    }

    TEST_CASE("bundle round trip predicts identically") {
        std::mt19937_64 rng(39);
        std::normal_distribution<double> n(0, 1);
        Eigen::MatrixXd X(60, 20);
        std::vector<int> y;
        for (int i = 0; i < 60; ++i) {
            y.push_back(i % 3);
            for (int j = 0; j < 20; ++j) X(i, j) = n(rng) * (j < 5 ? 10 : 1) + 4 * y.back() * (j == 0);
        }
        auto path = std::filesystem::temp_directory_path() / "cprloop_bundle_test.cprmodel.json";
        for (auto method : {Method::LDA, Method::Ridge, Method::Logistic}) {
            auto m = fit(method, Task::Force, X, y, {}, {}, "s01");
            REQUIRE(m.pca.has_value());
            save_bundle(path.string(), m);
            auto back = load_bundle(path.string());
            CHECK(back.trained_on == "s01");
            CHECK(back.param_count() == m.param_count());
            for (int i = 0; i < 60; ++i) {
                auto a = predict(m, X.row(i).transpose()), b = predict(back, X.row(i).transpose());
                CHECK(a.label == b.label);
                for (std::size_t c = 0; c < a.scores.size(); ++c) CHECK(a.scores[c] == doctest::Approx(b.scores[c]).epsilon(1e-12));
            }
        }
        std::filesystem::remove(path);
        CHECK_THROWS_AS(from_bundle_json("{\"v\":2}"), Error);
    }

    TEST_CASE("evaluate bookkeeping") {
        auto c = blobs(4);
        auto m = fit(Method::LDA, Task::Force, c.X, c.y, instances::no_pca(), instances::names(2));
        auto ev = evaluate(m, c.X, c.y);
        CHECK(ev.accuracy == 1.0);
        CHECK(ev.confusion[0][0] + ev.confusion[0][1] == 20);
        CHECK(ev.confusion[1][0] + ev.confusion[1][1] == 20);
        CHECK(ev.mean_ms < 50.0);
    }

    TEST_CASE("shuffled labels score near chance") {
        double total = 0;
        const int seeds = 40;
        for (int s = 0; s < seeds; ++s) {
            std::mt19937_64 rng(100 + s);
            std::normal_distribution<double> n(0, 1);
            Eigen::MatrixXd X(90, 3);
            std::vector<int> y;
            for (int i = 0; i < 90; ++i) {
                y.push_back(i % 3);
                for (int j = 0; j < 3; ++j) X(i, j) = n(rng) + 6 * (j == y.back());
            }
            auto m = fit(Method::LDA, Task::Force, X, y, instances::no_pca(), instances::names(3));
            std::shuffle(y.begin(), y.end(), rng);
            total += evaluate(m, X, y).accuracy;
        }
        CHECK(std::fabs(total / seeds - 1.0 / 3.0) <= 0.1);
    }

    TEST_CASE("fit preconditions") {
        auto c = blobs(5);
        std::vector<int> one_class(c.y.size(), 0);
        CHECK_THROWS_AS(fit(Method::LDA, Task::Force, c.X, one_class, {}, instances::names(2)), Error);
        try {
            fit(Method::LDA, Task::Force, c.X, one_class, {}, instances::names(2));
        } catch (const Error& e) {
            CHECK(e.code() == Errc::MissingClass);
        }
        Eigen::MatrixXd bad = c.X;
        bad(3, 1) = NAN;
        CHECK_THROWS_AS(fit(Method::Ridge, Task::Force, bad, c.y, {}, instances::names(2)), Error);
        auto m = fit(Method::Ridge, Task::Force, c.X, c.y, instances::no_pca(), instances::names(2));
        CHECK_THROWS_AS(predict(m, Eigen::VectorXd::Zero(3)), Error);
    }
}
